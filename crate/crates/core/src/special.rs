//! Special functions not covered by `statrs`: the modified Bessel function of
//! the second kind for real order, and the Matérn correlation built on it.

use std::f64::consts::PI;

pub use statrs::function::gamma::{digamma, gamma, ln_gamma};

/// Euler-Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 100_000;

// Taylor coefficients of 1/Gamma(1+z), odd powers 1, 3, 5.
const RGAM_ODD: [f64; 3] = [EULER_GAMMA, -0.042_002_635_034_095_24, -0.042_197_734_555_544_34];

/// Returns (1/Γ(1-μ) - 1/Γ(1+μ)) / (2μ), 1/Γ(1+μ), 1/Γ(1-μ) for |μ| ≤ 1/2.
fn temme_gammas(mu: f64) -> (f64, f64, f64) {
    let gampl = 1.0 / gamma(1.0 + mu);
    let gammi = 1.0 / gamma(1.0 - mu);
    let gam1 = if mu.abs() < 1e-3 {
        let m2 = mu * mu;
        -(RGAM_ODD[0] + m2 * (RGAM_ODD[1] + m2 * RGAM_ODD[2]))
    } else {
        (gammi - gampl) / (2.0 * mu)
    };
    (gam1, gampl, gammi)
}

/// Exponentially scaled `K_ν(x) · e^x` for `ν ≥ 0`, `x > 0`.
///
/// Temme's series for `x < 2`, Steed's continued fraction otherwise, then
/// forward recurrence in the order from `μ = ν - round(ν)`.
pub fn bessel_k_scaled(nu: f64, x: f64) -> f64 {
    assert!(x > 0.0, "bessel_k requires x > 0, got {x}");
    let nu = nu.abs();
    let nl = (nu + 0.5).floor() as usize;
    let mu = nu - nl as f64;
    let mu2 = mu * mu;
    let xi = 1.0 / x;
    let xi2 = 2.0 * xi;

    let (mut k_mu, mut k_mu1) = if x < 2.0 {
        let x2 = 0.5 * x;
        let pimu = PI * mu;
        let fact = if pimu.abs() < EPS { 1.0 } else { pimu / pimu.sin() };
        let d = -x2.ln();
        let e = mu * d;
        let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
        let (gam1, gampl, gammi) = temme_gammas(mu);
        let gam2 = 0.5 * (gammi + gampl);
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let ee = e.exp();
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        for i in 1..MAX_ITER {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - mu2);
            c *= dd / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            sum1 += c * (p - fi * ff);
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        let scale = x.exp();
        (sum * scale, sum1 * xi2 * scale)
    } else {
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut h = d;
        let mut delh = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - mu2;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        for i in 2..MAX_ITER {
            let fi = i as f64;
            a -= 2.0 * (fi - 1.0);
            c = -a * c / fi;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh = (b * d - 1.0) * delh;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                break;
            }
        }
        h *= a1;
        let k = (PI / (2.0 * x)).sqrt() / s;
        (k, k * (mu + x + 0.5 - h) * xi)
    };
    for i in 1..=nl {
        let next = (mu + i as f64) * xi2 * k_mu1 + k_mu;
        k_mu = k_mu1;
        k_mu1 = next;
    }
    k_mu
}

/// Modified Bessel function of the second kind `K_ν(x)`.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    if x > 700.0 {
        return 0.0;
    }
    bessel_k_scaled(nu, x) * (-x).exp()
}

/// Matérn correlation `2^{1-ν}/Γ(ν) (κd)^ν K_ν(κd)`.
///
/// Returns 1 at `d = 0` and underflows cleanly to 0 for large `κd`.
pub fn matern_correlation(d: f64, kappa: f64, nu: f64) -> f64 {
    assert!(d >= 0.0 && kappa > 0.0 && nu > 0.0);
    let x = kappa * d;
    if x < 1e-12 {
        return 1.0;
    }
    let log_c = (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu) + nu * x.ln()
        + bessel_k_scaled(nu, x).ln()
        - x;
    log_c.exp().min(1.0)
}

/// Distance at which the Matérn field is considered decorrelated: `√(8ν)/κ`.
pub fn nominal_range(kappa: f64, nu: f64) -> f64 {
    (8.0 * nu).sqrt() / kappa
}

#[cfg(test)]
mod tests {
    use super::*;
    use windspde_oracles::quad::integrate_to_inf;

    // K_ν(x) = e^{-x} ∫₀^∞ exp(-x (cosh t - 1)) cosh(νt) dt
    fn bessel_k_quadrature(nu: f64, x: f64) -> f64 {
        (-x).exp() * integrate_to_inf(|t| (-x * (t.cosh() - 1.0)).exp() * (nu * t).cosh(), 0.0, 1e-15)
    }

    #[test]
    fn bessel_k_matches_integral_representation() {
        for &nu in &[0.0, 0.3, 0.5, 1.0, 1.5, 2.25, 3.0] {
            for &x in &[0.05, 0.4, 1.0, 1.999, 2.0, 2.83, 7.5, 20.0] {
                let k = bessel_k(nu, x);
                let q = bessel_k_quadrature(nu, x);
                assert!(((k - q) / q).abs() < 1e-10, "nu={nu} x={x}: {k} vs {q}");
            }
        }
    }

    #[test]
    fn bessel_half_order_closed_form() {
        for &x in &[0.1, 1.0, 3.0, 10.0] {
            let exact = (PI / (2.0 * x)).sqrt() * (-x).exp();
            assert!(((bessel_k(0.5, x) - exact) / exact).abs() < 1e-13);
        }
    }

    #[test]
    fn matern_reference_values() {
        assert_eq!(matern_correlation(0.0, 3.0, 1.0), 1.0);
        assert!((matern_correlation(1.0, 1.0, 0.5) - (-1.0f64).exp()).abs() < 1e-13);
        // sqrt(8) K_1(sqrt(8)), K_1 from the integral representation.
        let x = 8f64.sqrt();
        let expected = x * bessel_k_quadrature(1.0, x);
        let got = matern_correlation(1.0, x, 1.0);
        assert!((got - expected).abs() < 1e-10);
        assert!((got - 0.1397).abs() < 5e-4);
        assert_eq!(matern_correlation(1e4, 1.0, 1.0), 0.0);
    }

    #[test]
    fn matern_is_monotone_in_distance() {
        for &nu in &[0.5, 1.0, 2.5] {
            let mut prev = 1.0;
            for i in 1..400 {
                let c = matern_correlation(i as f64 * 0.02, 2.0, nu);
                assert!(c <= prev + 1e-15);
                prev = c;
            }
        }
    }

    #[test]
    fn nominal_range_values() {
        assert!((nominal_range(8f64.sqrt(), 1.0) - 1.0).abs() < 1e-15);
        // sqrt(8) / 1.0341 = 2.73516...
        assert!((nominal_range(1.0341, 1.0) - 2.73516).abs() < 1e-5);
        assert!((nominal_range(0.3426, 1.0) - 8.256).abs() < 1e-3);
        for &k in &[0.1, 1.0, 7.3] {
            assert_eq!(nominal_range(k, 1.0) * k, 8f64.sqrt());
        }
    }
}
