//! Weibull likelihood and prior densities.
//!
//! The Weibull shape gets a penalised-complexity prior that shrinks towards
//! the exponential model (`α = 1`). The distance is `d(α) = √(2·KLD(α))`
//! with KLD between Weibull(α, s) and the exponential of the same scale `s`:
//!
//! `KLD(α) = Γ(1 + 1/α) + log α − 1 − γ + γ/α`
//!
//! which is free of `s`. Temporal and spline precisions get the PC prior for
//! a precision (`σ = τ^{-1/2} ~ Exp(λ)`), AR(1) correlations a Gaussian prior
//! on `log((1+ρ)/(1-ρ))`, and the Matérn field the joint PC prior on
//! (range, marginal sd).

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{digamma, gamma, ln_gamma, EULER_GAMMA};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeibullParams {
    pub alpha: f64,
    pub lambda: f64,
}

impl WeibullParams {
    pub fn new(alpha: f64, lambda: f64) -> Result<Self> {
        if !(alpha > 0.0 && lambda > 0.0) {
            return Err(Error::Data(format!("Weibull parameters must be positive (alpha={alpha}, lambda={lambda})")));
        }
        Ok(Self { alpha, lambda })
    }

    pub fn logpdf(&self, y: f64) -> Result<f64> {
        weibull_logpdf(y, self.alpha, self.lambda)
    }
}

/// Log-density of the Weibull distribution with shape `alpha` and scale `lambda`.
pub fn weibull_logpdf(y: f64, alpha: f64, lambda: f64) -> Result<f64> {
    if !(y > 0.0) {
        return Err(Error::Data(format!("Weibull observations must be positive, got {y}")));
    }
    let log_ratio = y.ln() - lambda.ln();
    Ok(alpha.ln() - lambda.ln() + (alpha - 1.0) * log_ratio - (alpha * log_ratio).exp())
}

const ZETA3: f64 = 1.202_056_903_159_594_3;
const ZETA5: f64 = 1.036_927_755_143_37;

/// Taylor coefficients `[k0, .., k4]` of KLD in `z = 1/α − 1`.
fn kld_series() -> [f64; 5] {
    // log Γ(1+z) = −γz + Σ_{k≥2} (−1)^k ζ(k)/k z^k
    let a = [0.0, -EULER_GAMMA, PI * PI / 12.0, -ZETA3 / 3.0, PI.powi(4) / 360.0, -ZETA5 / 5.0];
    let mut c = [0.0; 5];
    c[0] = 1.0;
    for n in 1..5 {
        c[n] = (1..=n).map(|k| k as f64 * a[k] * c[n - k]).sum::<f64>() / n as f64;
    }
    let mut out = [0.0; 5];
    for n in 0..5 {
        let shifted = c[n] + if n > 0 { c[n - 1] } else { 0.0 };
        let neg_log1p = if n > 0 { (-1f64).powi(n as i32) / n as f64 } else { 0.0 };
        let linear = match n {
            0 => -1.0,
            1 => EULER_GAMMA,
            _ => 0.0,
        };
        out[n] = shifted + neg_log1p + linear;
    }
    out
}

const SERIES_RADIUS: f64 = 1e-4;

/// Kullback-Leibler divergence from Weibull(α) to the exponential base model.
pub fn weibull_kld(alpha: f64) -> f64 {
    assert!(alpha > 0.0);
    let z = 1.0 / alpha - 1.0;
    if z.abs() < SERIES_RADIUS {
        let k = kld_series();
        return z * z * (k[2] + z * (k[3] + z * k[4]));
    }
    let lg = ln_gamma(1.0 + 1.0 / alpha);
    lg.exp() + alpha.ln() - 1.0 - EULER_GAMMA + EULER_GAMMA / alpha
}

/// `d(α) = √(2·KLD(α))`.
pub fn weibull_kld_distance(alpha: f64) -> f64 {
    let z = 1.0 / alpha - 1.0;
    if z.abs() < SERIES_RADIUS {
        let k = kld_series();
        return z.abs() * (2.0 * (k[2] + z * (k[3] + z * k[4]))).sqrt();
    }
    (2.0 * weibull_kld(alpha)).max(0.0).sqrt()
}

/// `∂(2·KLD)/∂α`, the bracketed factor of the prior's Jacobian.
pub fn weibull_kld_derivative_factor(alpha: f64) -> f64 {
    let u = 1.0 / alpha;
    let gp = gamma(1.0 + u) * digamma(1.0 + u);
    2.0 * (u - EULER_GAMMA * u * u - gp * u * u)
}

/// `|∂d/∂α|`, continuous through the removable singularity at `α = 1`.
pub fn weibull_kld_distance_slope(alpha: f64) -> f64 {
    let z = 1.0 / alpha - 1.0;
    if z.abs() < SERIES_RADIUS {
        let k = kld_series();
        let num = 2.0 * k[2] + z * (3.0 * k[3] + z * 4.0 * k[4]);
        let den = (2.0 * (k[2] + z * (k[3] + z * k[4]))).sqrt();
        return (num / den).abs() / (alpha * alpha);
    }
    let d = weibull_kld_distance(alpha);
    (0.5 * weibull_kld_derivative_factor(alpha) / d).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcPriorSpec {
    /// Rate of the exponential prior on the distance scale.
    pub theta: f64,
}

impl Default for PcPriorSpec {
    fn default() -> Self {
        Self { theta: 5.0 }
    }
}

/// Log-density of the PC prior for the Weibull shape.
///
/// Both sides of the base model receive half the mass, hence `θ/2`.
pub fn pc_prior_logpdf(alpha: f64, spec: &PcPriorSpec) -> f64 {
    if !(alpha > 0.0) || !(spec.theta > 0.0) {
        return f64::NEG_INFINITY;
    }
    let d = weibull_kld_distance(alpha);
    let slope = weibull_kld_distance_slope(alpha);
    if !d.is_finite() || !(slope > 0.0) || !slope.is_finite() {
        return f64::NEG_INFINITY;
    }
    (spec.theta / 2.0).ln() - spec.theta * d + slope.ln()
}

/// PC prior for a precision `τ`: `P(σ > u) = p` with `σ = τ^{-1/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrecisionPrior {
    pub u: f64,
    pub p: f64,
}

impl Default for PrecisionPrior {
    fn default() -> Self {
        Self { u: 1.0, p: 0.01 }
    }
}

impl PrecisionPrior {
    fn rate(&self) -> f64 {
        -self.p.ln() / self.u
    }

    pub fn logpdf(&self, precision: f64) -> f64 {
        if !(precision > 0.0) {
            return f64::NEG_INFINITY;
        }
        let lam = self.rate();
        (lam / 2.0).ln() - 1.5 * precision.ln() - lam / precision.sqrt()
    }

    /// Density of `log τ`.
    pub fn log_scale_logpdf(&self, log_precision: f64) -> f64 {
        let lam = self.rate();
        (lam / 2.0).ln() - 0.5 * log_precision - lam * (-0.5 * log_precision).exp()
    }
}

/// Gaussian prior on `log((1+ρ)/(1-ρ))`, symmetric about `ρ = 0`.
///
/// The density in `ρ` has its mode at zero whenever `sd² < 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationPrior {
    pub sd: f64,
}

impl Default for CorrelationPrior {
    fn default() -> Self {
        Self { sd: 1.0 }
    }
}

/// `log((1+ρ)/(1-ρ))`.
pub fn rho_to_internal(rho: f64) -> f64 {
    ((1.0 + rho) / (1.0 - rho)).ln()
}

pub fn internal_to_rho(t: f64) -> f64 {
    (0.5 * t).tanh()
}

impl CorrelationPrior {
    pub fn internal_logpdf(&self, t: f64) -> f64 {
        -0.5 * (t / self.sd).powi(2) - self.sd.ln() - 0.5 * (2.0 * PI).ln()
    }

    pub fn logpdf(&self, rho: f64) -> f64 {
        if !(rho.abs() < 1.0) {
            return f64::NEG_INFINITY;
        }
        self.internal_logpdf(rho_to_internal(rho)) + LN_2 - (1.0 - rho * rho).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ar1HyperSpec {
    #[serde(default)]
    pub precision: PrecisionPrior,
    #[serde(default)]
    pub rho: CorrelationPrior,
}

/// Joint log prior of an AR(1) effect's correlation and marginal precision.
pub fn ar1_log_prior(rho: f64, precision: f64, spec: &Ar1HyperSpec) -> f64 {
    spec.rho.logpdf(rho) + spec.precision.logpdf(precision)
}

pub fn rw2_log_prior(precision: f64, spec: &PrecisionPrior) -> f64 {
    spec.logpdf(precision)
}

/// Joint PC prior for the Matérn range `r` and marginal sd `σ` in 2-D:
/// `P(r < range0) = p_range`, `P(σ > sigma0) = p_sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaternPrior {
    pub range0: f64,
    pub p_range: f64,
    pub sigma0: f64,
    pub p_sigma: f64,
}

impl Default for MaternPrior {
    fn default() -> Self {
        Self { range0: 2.0, p_range: 0.5, sigma0: 1.0, p_sigma: 0.01 }
    }
}

impl MaternPrior {
    /// Density of (range, sd).
    pub fn logpdf(&self, range: f64, sigma: f64) -> f64 {
        if !(range > 0.0 && sigma > 0.0) {
            return f64::NEG_INFINITY;
        }
        let l1 = -self.p_range.ln() * self.range0;
        let l2 = -self.p_sigma.ln() / self.sigma0;
        l1.ln() - 2.0 * range.ln() - l1 / range + l2.ln() - l2 * sigma
    }

    /// Density of `(log κ, log τ)` for `Q = τ²(κ⁴C + 2κ²G + GC⁻¹G)`, where
    /// range = √8/κ and σ² = 1/(4πκ²τ²). The map has unit Jacobian in logs.
    pub fn internal_logpdf(&self, log_kappa: f64, log_tau: f64) -> f64 {
        let range = 8f64.sqrt() * (-log_kappa).exp();
        let sigma = (-0.5 * (4.0 * PI).ln() - log_kappa - log_tau).exp();
        self.logpdf(range, sigma) + range.ln() + sigma.ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use windspde_oracles::quad::{integrate, integrate_to_inf};

    #[test]
    fn weibull_reference_values() {
        assert!((weibull_logpdf(1.0, 1.0, 1.0).unwrap() + 1.0).abs() < 1e-15);
        // log 4 - 4
        assert!((weibull_logpdf(2.0, 2.0, 1.0).unwrap() - (4f64.ln() - 4.0)).abs() < 1e-14);
        assert!((weibull_logpdf(2.0, 2.0, 1.0).unwrap() + 2.6137).abs() < 1e-4);
        assert!(weibull_logpdf(0.0, 2.0, 1.0).is_err());
        assert!(weibull_logpdf(-1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn weibull_density_integrates_to_one() {
        for &a in &[0.5, 1.0, 2.0] {
            for &l in &[0.5, 1.0, 3.0] {
                // Split at the scale to resolve the α < 1 singularity at 0.
                let f = |y: f64| if y > 0.0 { weibull_logpdf(y, a, l).unwrap().exp() } else { 0.0 };
                let total = integrate(f, 0.0, l, 1e-13) + integrate_to_inf(f, l, 1e-13);
                assert!((total - 1.0).abs() < 1e-8, "alpha={a} lambda={l}: {total}");
            }
        }
    }

    fn kld_by_quadrature(alpha: f64) -> f64 {
        // KL(Weibull(α, 1) || Exp(1)) = ∫ f log(f / e^{-y}) dy
        let f = |y: f64| {
            if y <= 0.0 {
                return 0.0;
            }
            let lf = weibull_logpdf(y, alpha, 1.0).unwrap();
            let v = lf.exp() * (lf + y);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        };
        integrate(f, 0.0, 1.0, 1e-14) + integrate_to_inf(f, 1.0, 1e-14)
    }

    #[test]
    fn distance_agrees_with_quadrature_kl() {
        for &a in &[0.5, 0.8, 1.5, 2.0, 3.0, 5.0] {
            let q = (2.0 * kld_by_quadrature(a)).sqrt();
            assert!((weibull_kld_distance(a) - q).abs() < 1e-6, "alpha={a}");
        }
        assert_eq!(weibull_kld_distance(1.0), 0.0);
        for &a in &[0.5, 2.0, 5.0] {
            assert!(weibull_kld_distance(a) > 0.0);
        }
    }

    #[test]
    fn distance_recovered_by_integrating_slope() {
        // Integrating |∂d/∂α| from the base model reproduces d(α).
        for &a in &[0.4, 0.9, 1.3, 2.5, 4.0] {
            let (lo, hi) = if a < 1.0 { (a, 1.0) } else { (1.0, a) };
            let integral = integrate(weibull_kld_distance_slope, lo, hi, 1e-13);
            assert!((integral - weibull_kld_distance(a)).abs() < 1e-9, "alpha={a}");
        }
    }

    #[test]
    fn slope_matches_finite_differences() {
        for &a in &[0.5, 1.5, 3.0] {
            let h = 1e-5 * a;
            let fd = (weibull_kld_distance(a + h) - weibull_kld_distance(a - h)) / (2.0 * h);
            let an = weibull_kld_distance_slope(a);
            assert!(((fd.abs() - an) / an).abs() < 1e-5, "alpha={a}: {fd} vs {an}");
        }
    }

    #[test]
    fn derivative_factor_vanishes_at_base() {
        assert!(weibull_kld_derivative_factor(1.0).abs() < 1e-14);
    }

    #[test]
    fn series_and_closed_form_join_smoothly() {
        for &z in &[0.9e-4, 1.1e-4, -0.9e-4, -1.1e-4] {
            let a = 1.0 / (1.0 + z);
            let k = kld_series();
            let series = z * z * (k[2] + z * (k[3] + z * k[4]));
            let lg = ln_gamma(1.0 + 1.0 / a);
            let direct = lg.exp() + a.ln() - 1.0 - EULER_GAMMA + EULER_GAMMA / a;
            assert!(((series - direct) / series).abs() < 1e-6);
        }
        let left = weibull_kld_distance_slope(1.0 - 1e-9);
        let right = weibull_kld_distance_slope(1.0 + 1e-9);
        let mid = weibull_kld_distance_slope(1.0);
        assert!((left - mid).abs() < 1e-6 && (right - mid).abs() < 1e-6);
        assert!(pc_prior_logpdf(1.0, &PcPriorSpec::default()).is_finite());
    }

    #[test]
    fn distance_grows_away_from_base() {
        let mut prev = 0.0;
        for i in 1..200 {
            let a = 1.0 + i as f64 * 0.05;
            let d = weibull_kld_distance(a);
            assert!(d > prev);
            prev = d;
        }
        prev = 0.0;
        for i in 1..200 {
            let a = 1.0 / (1.0 + i as f64 * 0.02);
            let d = weibull_kld_distance(a);
            assert!(d > prev);
            prev = d;
        }
    }

    fn pc_mass(theta: f64, lo: f64, hi: f64) -> f64 {
        let spec = PcPriorSpec { theta };
        integrate(|a| pc_prior_logpdf(a, &spec).exp(), lo, hi, 1e-12)
    }

    #[test]
    fn pc_prior_integrates_to_one() {
        for &theta in &[2.0, 5.0, 10.0] {
            let spec = PcPriorSpec { theta };
            let f = |a: f64| if a > 0.0 { pc_prior_logpdf(a, &spec).exp() } else { 0.0 };
            let total = integrate(f, 0.0, 1.0, 1e-12) + integrate_to_inf(f, 1.0, 1e-12);
            assert!((total - 1.0).abs() < 1e-3, "theta={theta}: {total}");
        }
    }

    #[test]
    fn pc_prior_concentrates_with_theta() {
        let m: Vec<f64> = [2.0, 5.0, 10.0].iter().map(|&t| pc_mass(t, 0.8, 1.25)).collect();
        assert!(m[0] < m[1] && m[1] < m[2]);
    }

    #[test]
    fn precision_prior_integrates_to_one() {
        let spec = PrecisionPrior::default();
        let f = |t: f64| if t > 0.0 { spec.logpdf(t).exp() } else { 0.0 };
        let total = integrate(f, 0.0, 1.0, 1e-12) + integrate_to_inf(f, 1.0, 1e-12);
        assert!((total - 1.0).abs() < 1e-4);
        // Same mass on the log scale.
        let g = |x: f64| spec.log_scale_logpdf(x).exp();
        let total = integrate(g, -60.0, 60.0, 1e-12);
        assert!((total - 1.0).abs() < 1e-4);
    }

    #[test]
    fn correlation_prior_is_symmetric_with_mode_at_zero() {
        let spec = Ar1HyperSpec::default();
        let at_zero = ar1_log_prior(0.0, 1.0, &spec);
        for i in 1..100 {
            let r = i as f64 / 100.0;
            let plus = ar1_log_prior(r, 1.0, &spec);
            assert!((plus - ar1_log_prior(-r, 1.0, &spec)).abs() < 1e-12);
            assert!(plus < at_zero);
        }
        assert_eq!(ar1_log_prior(1.0, 1.0, &spec), f64::NEG_INFINITY);
        assert_eq!(ar1_log_prior(-1.2, 1.0, &spec), f64::NEG_INFINITY);
        let total = integrate(|r| spec.rho.logpdf(r).exp(), -1.0 + 1e-15, 1.0 - 1e-15, 1e-12);
        assert!((total - 1.0).abs() < 1e-6);
        assert_eq!(rw2_log_prior(-1.0, &PrecisionPrior::default()), f64::NEG_INFINITY);
    }

    #[test]
    fn matern_prior_integrates_to_one() {
        let p = MaternPrior::default();
        let inner = |lk: f64| integrate(|lt| p.internal_logpdf(lk, lt).exp(), -25.0, 25.0, 1e-11);
        let total = integrate(inner, -25.0, 25.0, 1e-9);
        assert!((total - 1.0).abs() < 1e-4, "{total}");
    }
}
