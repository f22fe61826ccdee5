//! Gaussian approximation of `π(x | θ, y)` and the Laplace approximation of
//! `π(θ | y)` under sum-to-zero constraints.

use nalgebra::DMatrix;

use super::model::LatentGaussianModel;
use crate::error::{Error, Result};
use crate::sparse::{CholeskyFactor, SelectedInverse};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 200 }
    }
}

/// `W = H⁻¹Aᵀ` and `(AW)⁻¹` for the constraint rows.
#[derive(Debug, Clone)]
pub struct ConstraintCorrection {
    pub w: Vec<Vec<f64>>,
    pub aw_inv: DMatrix<f64>,
}

impl ConstraintCorrection {
    fn new(factor: &CholeskyFactor, blocks: &[std::ops::Range<usize>]) -> Result<(Self, f64)> {
        let n = factor.dim();
        let w: Vec<Vec<f64>> = blocks
            .iter()
            .map(|r| {
                let mut e = vec![0.0; n];
                e[r.clone()].fill(1.0);
                factor.solve(&e)
            })
            .collect();
        let k = blocks.len();
        let aw = DMatrix::from_fn(k, k, |i, j| w[j][blocks[i].clone()].iter().sum::<f64>());
        let aw = (&aw + aw.transpose()) * 0.5;
        let chol = aw.clone().cholesky().ok_or_else(|| Error::Numerical("constraint covariance is not positive definite".into()))?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok((Self { w, aw_inv: chol.inverse() }, log_det))
    }

    /// `W (AW)⁻¹ A v`.
    fn apply(&self, blocks: &[std::ops::Range<usize>], v: &mut [f64]) {
        let av: Vec<f64> = blocks.iter().map(|r| v[r.clone()].iter().sum()).collect();
        let c: Vec<f64> = (0..av.len()).map(|i| (0..av.len()).map(|j| self.aw_inv[(i, j)] * av[j]).sum()).collect();
        for (wk, ck) in self.w.iter().zip(&c) {
            for (vi, wi) in v.iter_mut().zip(wk) {
                *vi -= ck * wi;
            }
        }
    }

    /// Covariance correction `[W (AW)⁻¹ Wᵀ]_ij`.
    pub fn correction(&self, i: usize, j: usize) -> f64 {
        let k = self.w.len();
        let mut s = 0.0;
        for a in 0..k {
            for b in 0..k {
                s += self.w[a][i] * self.aw_inv[(a, b)] * self.w[b][j];
            }
        }
        s
    }
}

/// Constrained Gaussian approximation at one hyperparameter value.
#[derive(Debug, Clone)]
pub struct GaussianApprox {
    pub theta: Vec<f64>,
    pub mode: Vec<f64>,
    pub eta: Vec<f64>,
    /// Factor of `Q + MᵀDM` at the mode; `None` without latent values.
    pub factor: Option<CholeskyFactor>,
    pub constraint: Option<ConstraintCorrection>,
    pub log_lik: f64,
    /// Laplace approximation of `log π(y | θ)`.
    pub log_marginal: f64,
    /// `log π(y | θ) + log π(θ)` for the free coordinates.
    pub log_post: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl GaussianApprox {
    /// Marginal variances of the constrained approximation.
    pub fn marginal_variances(&self, sel: &SelectedInverse) -> Vec<f64> {
        let mut v = sel.diagonal();
        if let Some(c) = &self.constraint {
            for (i, vi) in v.iter_mut().enumerate() {
                *vi = (*vi - c.correction(i, i)).max(0.0);
            }
        }
        v
    }

    /// Constrained covariance of `(i, j)` if it lies in the factor pattern.
    pub fn covariance(&self, sel: &SelectedInverse, i: usize, j: usize) -> Option<f64> {
        let s = sel.get(i, j)?;
        Some(match &self.constraint {
            Some(c) => s - c.correction(i, j),
            None => s,
        })
    }

    pub fn selected_inverse(&self) -> Option<SelectedInverse> {
        self.factor.as_ref().map(|f| f.selected_inverse())
    }
}

fn sum_lik(model: &LatentGaussianModel, eta: &[f64], lik_theta: f64) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let n = eta.len();
    let mut l = 0.0;
    let mut dl = vec![0.0; n];
    let mut d = vec![0.0; n];
    for i in 0..n {
        let (li, gi, di) = model.obs_terms(i, eta[i], lik_theta);
        l += li;
        dl[i] = gi;
        d[i] = di;
    }
    if !l.is_finite() {
        return Err(Error::Numerical("log-likelihood is not finite".into()));
    }
    Ok((l, dl, d))
}

fn predictor_eta(model: &LatentGaussianModel, x: &[f64]) -> Vec<f64> {
    let mut eta = model.predictor.mul_vec(x);
    for (e, o) in eta.iter_mut().zip(&model.offset) {
        *e += o;
    }
    eta
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn center_blocks(blocks: &[std::ops::Range<usize>], v: &mut [f64]) {
    for r in blocks {
        let m = v[r.clone()].iter().sum::<f64>() / r.len() as f64;
        v[r.clone()].iter_mut().for_each(|x| *x -= m);
    }
}

/// Posterior precision values `Q + MᵀDM` in the posterior factor layout.
fn hessian_values(model: &LatentGaussianModel, prior: &[f64], d: &[f64]) -> Vec<f64> {
    let ws = &model.ws;
    let mut h = vec![0.0; ws.sym_post.value_len()];
    for (k, s) in ws.post_prior_slots.iter().enumerate() {
        if let Some(s) = s {
            h[*s] += prior[k];
        }
    }
    for (i, &di) in d.iter().enumerate() {
        let vals = model.predictor.row(i).1;
        let mut p = ws.pair_ptr[i];
        for a in 0..vals.len() {
            let da = di * vals[a];
            for &vb in &vals[a..] {
                h[ws.pair_slots[p] as usize] += da * vb;
                p += 1;
            }
        }
    }
    h
}

/// Mode of `π(x | θ, y)` subject to the constraints, and the Laplace terms.
pub fn gaussian_approx(model: &LatentGaussianModel, full: &[f64], x0: Option<&[f64]>, opts: &NewtonOptions) -> Result<GaussianApprox> {
    let n = model.n_latent();
    let lik_theta = full[0];
    let log_prior = model.log_prior(full);
    if n == 0 {
        let eta = model.offset.clone();
        let (l, _, _) = sum_lik(model, &eta, lik_theta)?;
        return Ok(GaussianApprox {
            theta: full.to_vec(),
            mode: Vec::new(),
            eta,
            factor: None,
            constraint: None,
            log_lik: l,
            log_marginal: l,
            log_post: l + log_prior,
            iterations: 0,
            converged: true,
        });
    }
    let blocks = model.constraints();
    let prior = model.prior_values(full)?;
    let mut q = model.ws.q_pattern.clone();
    q.values_mut().copy_from_slice(&prior);

    let mut x = match x0 {
        Some(v) if v.len() == n => v.to_vec(),
        _ => vec![0.0; n],
    };
    center_blocks(&blocks, &mut x);

    let objective = |x: &[f64]| -> Result<(f64, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
        let eta = predictor_eta(model, x);
        let (l, dl, d) = sum_lik(model, &eta, lik_theta)?;
        let qx = q.mul_vec(x);
        Ok((l - 0.5 * dot(x, &qx), eta, dl, d, qx))
    };

    let (mut phi, mut eta, mut dl, mut d, mut qx) = objective(&x)?;
    let mut iterations = 0;
    let mut converged = true;
    let (factor, constraint) = loop {
        let mtdl = model.predictor.transpose_mul_vec(&dl);
        let g: Vec<f64> = mtdl.iter().zip(&qx).map(|(a, b)| a - b).collect();
        let h = hessian_values(model, &prior, &d);
        let factor = model.ws.sym_post.factor(&h)?;
        let constraint = if blocks.is_empty() { None } else { Some(ConstraintCorrection::new(&factor, &blocks)?) };
        let mut gp = g.clone();
        center_blocks(&blocks, &mut gp);
        let scale = 1.0 + norm(&mtdl).max(norm(&qx));
        if norm(&gp) <= opts.tol * scale {
            break (factor, constraint);
        }
        if iterations >= opts.max_iter {
            converged = false;
            break (factor, constraint);
        }
        iterations += 1;
        let mut step = factor.solve(&g);
        if let Some(c) = &constraint {
            c.0.apply(&blocks, &mut step);
        }
        let slope = dot(&g, &step);
        // Below the objective's rounding level Armijo cannot tell steps apart;
        // the full Newton step is then taken.
        let resolvable = slope > 1e3 * f64::EPSILON * (1.0 + phi.abs());
        let mut s = 1.0;
        loop {
            let mut trial: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + s * b).collect();
            center_blocks(&blocks, &mut trial);
            if let Ok(next) = objective(&trial) {
                if !resolvable || next.0 >= phi + 1e-4 * s * slope || s * norm(&step) < 1e-14 * (1.0 + norm(&x)) {
                    x = trial;
                    (phi, eta, dl, d, qx) = next;
                    break;
                }
            }
            s *= 0.5;
            if s < 1e-12 {
                return Err(Error::Numerical("inner Newton line search failed".into()));
            }
        }
    };

    let log_lik = phi + 0.5 * dot(&x, &qx);
    let sym_prior = &model.ws.sym_prior;
    let mut pv = vec![0.0; sym_prior.value_len()];
    for (k, s) in model.ws.prior_slots.iter().enumerate() {
        if let Some(s) = s {
            pv[*s] += prior[k];
        }
    }
    let prior_factor = sym_prior.factor(&pv)?;
    let mut log_marginal = phi + 0.5 * prior_factor.log_det() - 0.5 * factor.log_det();
    let constraint = match constraint {
        Some((c, post_ld)) => {
            let (_, prior_ld) = ConstraintCorrection::new(&prior_factor, &blocks)?;
            log_marginal += 0.5 * prior_ld - 0.5 * post_ld;
            Some(c)
        }
        None => None,
    };
    if !log_marginal.is_finite() {
        return Err(Error::Numerical("Laplace approximation is not finite".into()));
    }
    Ok(GaussianApprox {
        theta: full.to_vec(),
        mode: x,
        eta,
        factor: Some(factor),
        constraint,
        log_lik,
        log_marginal,
        log_post: log_marginal + log_prior,
        iterations,
        converged,
    })
}

/// Laplace approximation of `log π(θ | y)` up to a constant, at the free coordinates.
pub fn log_posterior_hyper(model: &LatentGaussianModel, free: &[f64], x0: Option<&[f64]>, opts: &NewtonOptions) -> Result<f64> {
    let ga = gaussian_approx(model, &model.expand(free), x0, opts)?;
    if !ga.converged {
        return Err(Error::Numerical(format!("inner Newton did not converge in {} iterations at theta = {:?}", ga.iterations, free)));
    }
    Ok(ga.log_post)
}

/// `Σ log π(yᵢ | ηᵢ) − ½ xᵀQx` and its gradient in `x`.
pub fn log_joint(model: &LatentGaussianModel, full: &[f64], x: &[f64]) -> Result<(f64, Vec<f64>)> {
    if x.len() != model.n_latent() {
        return Err(Error::Data(format!("latent vector has length {} but the model needs {}", x.len(), model.n_latent())));
    }
    let eta = predictor_eta(model, x);
    if let Some(i) = eta.iter().position(|e| !e.is_finite()) {
        return Err(Error::Numerical(format!("linear predictor of record {i} is not finite")));
    }
    let (l, dl, _) = sum_lik(model, &eta, full[0])?;
    let qx = model.prior_precision(full)?.mul_vec(x);
    let grad = model.predictor.transpose_mul_vec(&dl).iter().zip(&qx).map(|(a, b)| a - b).collect();
    Ok((l - 0.5 * dot(x, &qx), grad))
}
