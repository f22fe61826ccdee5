//! Outer exploration of `π(θ | y)`: mode search, curvature, design points,
//! hyperparameter marginals and mixed latent marginals.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::laplace::{gaussian_approx, GaussianApprox, NewtonOptions};
use super::model::{ComponentKind, HyperKind, LatentGaussianModel, Likelihood};
use super::spline::NaturalSpline;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Grid for at most two free hyperparameters, otherwise CCD.
    #[default]
    Auto,
    Grid,
    Ccd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExploreOptions {
    pub strategy: Strategy,
    /// Inner Newton relative gradient tolerance.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    /// Outer mode search stops when the Newton decrement drops below this.
    pub mode_tol: f64,
    pub max_outer_iter: usize,
    pub gradient_step: f64,
    pub hessian_step: f64,
    /// Grid spacing in standardised coordinates.
    pub grid_step: f64,
    /// Grid axes extend until the log density drops by this much.
    pub grid_drop: f64,
    /// CCD radius factor.
    pub ccd_f: f64,
    /// Points per hyperparameter marginal curve.
    pub marginal_points: usize,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        Self {
            strategy: Strategy::Auto,
            inner_tol: 1e-8,
            inner_max_iter: 200,
            mode_tol: 1e-5,
            max_outer_iter: 200,
            gradient_step: 1e-3,
            hessian_step: 0.02,
            grid_step: 0.75,
            grid_drop: 6.0,
            ccd_f: 1.1,
            marginal_points: 121,
        }
    }
}

impl ExploreOptions {
    fn newton(&self) -> NewtonOptions {
        NewtonOptions { tol: self.inner_tol, max_iter: self.inner_max_iter }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("inner_tol", self.inner_tol),
            ("mode_tol", self.mode_tol),
            ("gradient_step", self.gradient_step),
            ("hessian_step", self.hessian_step),
            ("grid_step", self.grid_step),
            ("grid_drop", self.grid_drop),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("inference.{name} must be positive, got {v}")));
            }
        }
        if !(self.ccd_f > 1.0) {
            return Err(Error::Config(format!("inference.ccd_f must exceed 1, got {}", self.ccd_f)));
        }
        if self.marginal_points < 11 {
            return Err(Error::Config("inference.marginal_points must be at least 11".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    /// Full internal hyperparameter vector.
    pub theta: Vec<f64>,
    pub log_post: f64,
    pub weight: f64,
    pub inner_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperMarginal {
    pub name: String,
    pub natural_name: String,
    pub internal: Vec<f64>,
    pub internal_density: Vec<f64>,
    pub natural: Vec<f64>,
    pub natural_density: Vec<f64>,
    pub internal_mean: f64,
    pub internal_sd: f64,
    pub natural_mean: f64,
    pub natural_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

/// Second moments on the edges of the spatial block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialMoments {
    pub block: String,
    pub offset: usize,
    /// Local vertex pairs `(i, j)` with `i < j`, sorted.
    pub pairs: Vec<(u32, u32)>,
    pub second_moment: Vec<f64>,
}

impl SpatialMoments {
    /// `E[x_i x_j]` for a stored pair, in local indices.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let key = if i < j { (i as u32, j as u32) } else { (j as u32, i as u32) };
        self.pairs.binary_search(&key).ok().map(|p| self.second_moment[p])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub sd: f64,
}

/// Posterior summaries of the reported model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointEstimates {
    pub alpha: Option<Estimate>,
    /// Nugget variance; only defined for a Gaussian likelihood.
    pub sigma2_e: Option<Estimate>,
    pub sigma2_x: Option<Estimate>,
    pub kappa: Option<Estimate>,
    pub nominal_range: Option<Estimate>,
    pub tau: Option<Estimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub strategy: Strategy,
    pub outer_iterations: usize,
    pub mode_converged: bool,
    pub evaluations: usize,
    pub design_points: usize,
    pub dropped_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorResult {
    pub hyper_names: Vec<String>,
    pub free: Vec<bool>,
    /// Free internal coordinates at the mode.
    pub mode: Vec<f64>,
    /// Covariance of the free coordinates from the curvature at the mode.
    pub covariance: Vec<Vec<f64>>,
    pub design: Vec<DesignPoint>,
    pub marginals: Vec<HyperMarginal>,
    pub blocks: Vec<BlockInfo>,
    pub latent_mean: Vec<f64>,
    pub latent_sd: Vec<f64>,
    pub spatial: Option<SpatialMoments>,
    pub estimates: PointEstimates,
    pub diagnostics: Diagnostics,
}

impl PosteriorResult {
    pub fn block(&self, name: &str) -> Option<&BlockInfo> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Design-weighted mean and sd of an internal coordinate.
    pub fn hyper_moments(&self, name: &str) -> Option<Estimate> {
        let k = self.hyper_names.iter().position(|n| n == name)?;
        Some(weighted(&self.design, |t| t[k]))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(crate::error::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }
}

fn weighted(design: &[DesignPoint], f: impl Fn(&[f64]) -> f64) -> Estimate {
    let mean: f64 = design.iter().map(|d| d.weight * f(&d.theta)).sum();
    let var: f64 = design.iter().map(|d| d.weight * (f(&d.theta) - mean).powi(2)).sum();
    Estimate { mean, sd: var.max(0.0).sqrt() }
}

struct Evaluator<'a> {
    model: &'a LatentGaussianModel,
    newton: NewtonOptions,
}

impl Evaluator<'_> {
    fn approx(&self, free: &[f64], x0: Option<&[f64]>) -> Result<GaussianApprox> {
        let ga = gaussian_approx(self.model, &self.model.expand(free), x0, &self.newton)?;
        if !ga.converged {
            return Err(Error::Numerical(format!("inner Newton did not converge at theta = {free:?}")));
        }
        Ok(ga)
    }

    fn log_post(&self, free: &[f64], x0: Option<&[f64]>) -> Option<f64> {
        self.approx(free, x0).ok().map(|g| g.log_post).filter(|v| v.is_finite())
    }

    /// Central-difference gradient, evaluated in parallel.
    fn gradient(&self, free: &[f64], x0: Option<&[f64]>, h: f64) -> Result<Vec<f64>> {
        let d = free.len();
        let vals: Vec<Option<f64>> = (0..2 * d)
            .into_par_iter()
            .map(|k| {
                let mut t = free.to_vec();
                t[k / 2] += if k % 2 == 0 { h } else { -h };
                self.log_post(&t, x0)
            })
            .collect();
        (0..d)
            .map(|i| match (vals[2 * i], vals[2 * i + 1]) {
                (Some(a), Some(b)) => Ok((a - b) / (2.0 * h)),
                _ => Err(Error::Numerical(format!("gradient evaluation failed near theta = {free:?}"))),
            })
            .collect()
    }

    /// Central-difference Hessian of the log posterior.
    fn hessian(&self, free: &[f64], f0: f64, x0: Option<&[f64]>, h: f64) -> Result<DMatrix<f64>> {
        let d = free.len();
        let mut offsets: Vec<Vec<(usize, f64)>> = Vec::new();
        for i in 0..d {
            offsets.push(vec![(i, h)]);
            offsets.push(vec![(i, -h)]);
        }
        for i in 0..d {
            for j in i + 1..d {
                for (si, sj) in [(h, h), (h, -h), (-h, h), (-h, -h)] {
                    offsets.push(vec![(i, si), (j, sj)]);
                }
            }
        }
        let vals: Vec<Option<f64>> = offsets
            .par_iter()
            .map(|off| {
                let mut t = free.to_vec();
                for &(k, s) in off {
                    t[k] += s;
                }
                self.log_post(&t, x0)
            })
            .collect();
        let vals: Vec<f64> = vals
            .into_iter()
            .collect::<Option<_>>()
            .ok_or_else(|| Error::Numerical("Hessian evaluation failed near the mode".into()))?;
        let mut hm = DMatrix::zeros(d, d);
        for i in 0..d {
            hm[(i, i)] = (vals[2 * i] - 2.0 * f0 + vals[2 * i + 1]) / (h * h);
        }
        let mut p = 2 * d;
        for i in 0..d {
            for j in i + 1..d {
                let v = (vals[p] - vals[p + 1] - vals[p + 2] + vals[p + 3]) / (4.0 * h * h);
                hm[(i, j)] = v;
                hm[(j, i)] = v;
                p += 4;
            }
        }
        Ok(hm)
    }
}

struct ModeSearch {
    theta: Vec<f64>,
    log_post: f64,
    latent: Vec<f64>,
    iterations: usize,
    converged: bool,
    evaluations: usize,
}

/// Quasi-Newton (BFGS) maximisation of the Laplace log posterior.
fn find_mode(ev: &Evaluator, opts: &ExploreOptions) -> Result<ModeSearch> {
    let d = ev.model.n_free();
    let mut theta = ev.model.initial_free();
    let ga = ev.approx(&theta, None)?;
    let mut f = ga.log_post;
    let mut latent = ga.mode;
    let mut evaluations = 1;
    if d == 0 {
        return Ok(ModeSearch { theta, log_post: f, latent, iterations: 0, converged: true, evaluations });
    }
    let h = opts.gradient_step;
    let mut g = ev.gradient(&theta, Some(&latent), h)?;
    evaluations += 2 * d;
    let mut b_inv = DMatrix::<f64>::identity(d, d);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_outer_iter {
        iterations += 1;
        let gv = DVector::from_column_slice(&g);
        let mut p = &b_inv * &gv;
        let mut decrement = gv.dot(&p);
        if decrement <= 0.0 {
            b_inv = DMatrix::identity(d, d);
            p = gv.clone();
            decrement = gv.dot(&p);
        }
        if 0.5 * decrement < opts.mode_tol {
            converged = true;
            break;
        }
        let max_step = p.amax();
        if max_step > 1.0 {
            p /= max_step;
        }
        let slope = gv.dot(&p);
        let mut s = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial: Vec<f64> = theta.iter().zip(p.iter()).map(|(a, b)| a + s * b).collect();
            evaluations += 1;
            if let Ok(ga) = ev.approx(&trial, Some(&latent)) {
                if ga.log_post.is_finite() && ga.log_post >= f + 1e-4 * s * slope {
                    accepted = Some((trial, ga));
                    break;
                }
            }
            s *= 0.5;
        }
        let Some((next, ga)) = accepted else {
            // No ascent along the quasi-Newton direction: try steepest ascent once.
            if b_inv != DMatrix::identity(d, d) {
                b_inv = DMatrix::identity(d, d);
                continue;
            }
            converged = 0.5 * decrement < 1e3 * opts.mode_tol;
            break;
        };
        let g_new = ev.gradient(&next, Some(&ga.mode), h)?;
        evaluations += 2 * d;
        let sv = DVector::from_iterator(d, next.iter().zip(&theta).map(|(a, b)| a - b));
        // Ascent problem: curvature pair uses y = -(g_new - g).
        let yv = DVector::from_iterator(d, g.iter().zip(&g_new).map(|(a, b)| a - b));
        let sy = sv.dot(&yv);
        if sy > 1e-12 * sv.norm() * yv.norm() {
            if iterations == 1 {
                b_inv = DMatrix::identity(d, d) * (sy / yv.dot(&yv));
            }
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(d, d);
            let left = &i - rho * &sv * yv.transpose();
            let right = &i - rho * &yv * sv.transpose();
            b_inv = &left * &b_inv * &right + rho * &sv * sv.transpose();
        }
        theta = next;
        f = ga.log_post;
        latent = ga.mode;
        g = g_new;
    }
    Ok(ModeSearch { theta, log_post: f, latent, iterations, converged, evaluations })
}

/// Standardisation `θ = mode + S z` from the negative Hessian.
fn standardise(neg_hessian: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = neg_hessian.nrows();
    let sym = (neg_hessian + neg_hessian.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let floor = if max > 0.0 { max * 1e-8 } else { 1.0 };
    let lambda: Vec<f64> = eig.eigenvalues.iter().map(|&l| if l > floor { l } else { floor.max(1e-2) }).collect();
    let mut s = eig.eigenvectors.clone();
    for j in 0..d {
        let c = 1.0 / lambda[j].sqrt();
        for i in 0..d {
            s[(i, j)] *= c;
        }
    }
    let cov = &s * s.transpose();
    (s, cov)
}

/// Two-level fractional factorial with main effects and two-factor
/// interactions unaliased.
pub fn fractional_factorial(d: usize) -> Vec<Vec<f64>> {
    if d == 0 {
        return Vec::new();
    }
    for k in 1..=d {
        if let Some(design) = try_factorial(d, k) {
            return design;
        }
    }
    unreachable!("a full factorial always resolves every interaction")
}

fn try_factorial(d: usize, k: usize) -> Option<Vec<Vec<f64>>> {
    let mut candidates: Vec<u32> = (1u32..(1 << k)).filter(|m| m.count_ones() >= 4).collect();
    candidates.sort_by_key(|m| (m.count_ones(), *m));
    let mut cols: Vec<u32> = (0..k).map(|i| 1u32 << i).collect();
    for c in candidates {
        if cols.len() == d {
            break;
        }
        cols.push(c);
        if !resolves(&cols) {
            cols.pop();
        }
    }
    if cols.len() < d || !resolves(&cols) {
        return None;
    }
    Some(
        (0u32..(1 << k))
            .map(|r| cols.iter().map(|&m| if (r & m).count_ones() % 2 == 0 { 1.0 } else { -1.0 }).collect())
            .collect(),
    )
}

/// Main effects and two-factor interactions are mutually orthogonal exactly
/// when their defining masks (XOR for products) are distinct and non-zero.
fn resolves(cols: &[u32]) -> bool {
    let mut effects: Vec<u32> = cols.to_vec();
    for i in 0..cols.len() {
        for j in i + 1..cols.len() {
            effects.push(cols[i] ^ cols[j]);
        }
    }
    let n = effects.len();
    effects.sort_unstable();
    effects.dedup();
    effects.len() == n && effects[0] != 0
}

/// Central composite design in standardised coordinates with log weight offsets.
fn ccd_points(d: usize, f: f64) -> Vec<(Vec<f64>, f64)> {
    let r = f * (d as f64).sqrt();
    let mut pts: Vec<Vec<f64>> = Vec::new();
    if d > 1 {
        pts.extend(fractional_factorial(d).into_iter().map(|row| row.into_iter().map(|v| v * f).collect()));
    }
    for j in 0..d {
        for s in [1.0, -1.0] {
            let mut z = vec![0.0; d];
            z[j] = s * r;
            pts.push(z);
        }
    }
    let n = pts.len() as f64;
    let log_delta = f * f * d as f64 / 2.0 - (n * (f * f - 1.0)).ln();
    std::iter::once((vec![0.0; d], 0.0)).chain(pts.into_iter().map(|z| (z, log_delta))).collect()
}

struct Evaluated {
    free: Vec<f64>,
    z: Vec<f64>,
    log_weight: f64,
    approx: Option<GaussianApprox>,
}

fn evaluate_points(ev: &Evaluator, mode: &[f64], s: &DMatrix<f64>, pts: Vec<(Vec<f64>, f64)>, x0: &[f64]) -> Vec<Evaluated> {
    pts.into_par_iter()
        .map(|(z, log_weight)| {
            let zv = DVector::from_column_slice(&z);
            let shift = s * zv;
            let free: Vec<f64> = mode.iter().zip(shift.iter()).map(|(a, b)| a + b).collect();
            let approx = ev.approx(&free, Some(x0)).ok().filter(|g| g.log_post.is_finite());
            Evaluated { free, z, log_weight, approx }
        })
        .collect()
}

fn grid_points(ev: &Evaluator, mode: &[f64], s: &DMatrix<f64>, f0: f64, x0: &[f64], opts: &ExploreOptions) -> (Vec<(Vec<f64>, f64)>, usize) {
    let d = mode.len();
    let mut evaluations = 0;
    let mut extent = vec![[0i64; 2]; d];
    for j in 0..d {
        for (side, sign) in [1.0, -1.0].into_iter().enumerate() {
            let mut k = 1i64;
            loop {
                let mut z = vec![0.0; d];
                z[j] = sign * k as f64 * opts.grid_step;
                let shift = s * DVector::from_column_slice(&z);
                let free: Vec<f64> = mode.iter().zip(shift.iter()).map(|(a, b)| a + b).collect();
                evaluations += 1;
                let drop = ev.log_post(&free, Some(x0)).map(|v| f0 - v).unwrap_or(f64::INFINITY);
                if drop > opts.grid_drop || k >= 40 {
                    break;
                }
                k += 1;
            }
            extent[j][side] = k;
        }
    }
    let mut pts = vec![Vec::new()];
    for e in &extent {
        let mut next = Vec::new();
        for p in &pts {
            for k in -e[1]..=e[0] {
                let mut q: Vec<f64> = p.clone();
                q.push(k as f64 * opts.grid_step);
                next.push(q);
            }
        }
        pts = next;
    }
    (pts.into_iter().map(|z| (z, 0.0)).collect(), evaluations)
}

/// Density of one internal coordinate on a regular grid, normalised.
fn marginal_curve(t: &[f64], logd: impl Fn(f64) -> f64) -> (Vec<f64>, f64, f64) {
    let ld: Vec<f64> = t.iter().map(|&v| logd(v)).collect();
    let peak = ld.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut dens: Vec<f64> = ld.iter().map(|v| (v - peak).exp()).collect();
    let total = trapezoid(t, &dens);
    dens.iter_mut().for_each(|v| *v /= total);
    let mean = trapezoid(t, &dens.iter().zip(t).map(|(p, x)| p * x).collect::<Vec<_>>());
    let var = trapezoid(t, &dens.iter().zip(t).map(|(p, x)| p * (x - mean).powi(2)).collect::<Vec<_>>());
    (dens, mean, var.max(0.0).sqrt())
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(a, b)| 0.5 * (a[1] - a[0]) * (b[0] + b[1])).sum()
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Asymmetric scale along each standardised axis from the axial design points.
fn axis_scales(points: &[Evaluated], f0: f64, d: usize) -> Vec<[f64; 2]> {
    let mut out = vec![[1.0, 1.0]; d];
    for (j, o) in out.iter_mut().enumerate() {
        for (side, sign) in [1.0, -1.0].into_iter().enumerate() {
            // Use the axial point closest to radius 1.5 on this side.
            let best = points
                .iter()
                .filter(|p| p.approx.is_some())
                .filter(|p| p.z.iter().enumerate().all(|(i, v)| if i == j { v * sign > 0.0 } else { *v == 0.0 }))
                .min_by(|a, b| (a.z[j].abs() - 1.5).abs().total_cmp(&(b.z[j].abs() - 1.5).abs()));
            if let Some(p) = best {
                let r = p.z[j].abs();
                let drop = f0 - p.approx.as_ref().unwrap().log_post;
                o[side] = if drop > 1e-6 { (r / (2.0 * drop).sqrt()).clamp(0.1, 10.0) } else { 10.0 };
            }
        }
    }
    out
}

fn split_normal_logpdf(t: f64, mode: f64, sd: [f64; 2]) -> f64 {
    let s = if t >= mode { sd[0] } else { sd[1] };
    -0.5 * ((t - mode) / s).powi(2)
}

/// Explores the hyperparameter posterior and summarises the latent field.
pub fn explore(model: &LatentGaussianModel, opts: &ExploreOptions) -> Result<PosteriorResult> {
    opts.validate()?;
    let ev = Evaluator { model, newton: opts.newton() };
    let d = model.n_free();
    let search = find_mode(&ev, opts)?;
    let mut evaluations = search.evaluations;
    let mode = search.theta.clone();
    let f0 = search.log_post;

    let (s, cov) = if d > 0 {
        let hm = ev.hessian(&mode, f0, Some(&search.latent), opts.hessian_step)?;
        evaluations += 2 * d * d;
        standardise(&(-hm))
    } else {
        (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0))
    };
    let strategy = match opts.strategy {
        Strategy::Auto if d <= 2 => Strategy::Grid,
        Strategy::Auto => Strategy::Ccd,
        other => other,
    };
    if strategy == Strategy::Grid && d > 2 {
        return Err(Error::Config(format!("grid exploration supports at most 2 free hyperparameters, the model has {d}")));
    }
    let pts = if d == 0 {
        vec![(Vec::new(), 0.0)]
    } else if strategy == Strategy::Grid {
        let (p, e) = grid_points(&ev, &mode, &s, f0, &search.latent, opts);
        evaluations += e;
        p
    } else {
        ccd_points(d, opts.ccd_f)
    };
    let n_pts = pts.len();
    evaluations += n_pts;
    let evaluated = evaluate_points(&ev, &mode, &s, pts, &search.latent);
    let kept: Vec<&Evaluated> = evaluated.iter().filter(|p| p.approx.is_some()).collect();
    let needed = if d == 0 { 1 } else { 3 };
    if kept.len() < needed {
        return Err(Error::Numerical(format!("only {} of {} design points converged", kept.len(), n_pts)));
    }
    let logw: Vec<f64> = kept.iter().map(|p| p.approx.as_ref().unwrap().log_post + p.log_weight).collect();
    let maxw = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = logw.iter().map(|v| (v - maxw).exp()).collect();
    let total: f64 = raw.iter().sum();
    let design: Vec<DesignPoint> = kept
        .iter()
        .zip(&raw)
        .map(|(p, w)| {
            let ga = p.approx.as_ref().unwrap();
            DesignPoint { theta: ga.theta.clone(), log_post: ga.log_post, weight: w / total, inner_iterations: ga.iterations }
        })
        .collect();

    // Hyperparameter marginals.
    let free_hypers = model.free_hypers();
    let mut marginals = Vec::with_capacity(d);
    let scales = if d > 0 { axis_scales(&evaluated, f0, d) } else { Vec::new() };
    for (k, h) in free_hypers.iter().enumerate() {
        let (grid, dens, mean, sd) = if d == 1 && strategy == Strategy::Grid {
            let mut knots: Vec<(f64, f64)> = kept.iter().map(|p| (p.free[0], p.approx.as_ref().unwrap().log_post)).collect();
            knots.sort_by(|a, b| a.0.total_cmp(&b.0));
            let xs: Vec<f64> = knots.iter().map(|v| v.0).collect();
            let ys: Vec<f64> = knots.iter().map(|v| v.1).collect();
            let spline = NaturalSpline::new(&xs, &ys)?;
            let grid = linspace(xs[0], xs[xs.len() - 1], opts.marginal_points);
            let (dens, mean, sd) = marginal_curve(&grid, |t| spline.eval(t));
            (grid, dens, mean, sd)
        } else {
            let mut sd = [0.0f64; 2];
            for (side, sign) in [1.0, -1.0].into_iter().enumerate() {
                let mut acc = 0.0;
                for j in 0..d {
                    let v = s[(k, j)];
                    let dir = if v * sign >= 0.0 { 0 } else { 1 };
                    acc += (v * scales[j][dir]).powi(2);
                }
                sd[side] = acc.sqrt();
            }
            let grid = linspace(mode[k] - 4.0 * sd[1], mode[k] + 4.0 * sd[0], opts.marginal_points);
            let (dens, mean, sdv) = marginal_curve(&grid, |t| split_normal_logpdf(t, mode[k], sd));
            (grid, dens, mean, sdv)
        };
        let natural: Vec<f64> = grid.iter().map(|&t| h.to_natural(t)).collect();
        let natural_density: Vec<f64> = grid.iter().zip(&dens).map(|(&t, p)| p * (-h.log_jacobian(t)).exp()).collect();
        let nat_mean = trapezoid(&grid, &dens.iter().zip(&natural).map(|(p, v)| p * v).collect::<Vec<_>>());
        let nat_var = trapezoid(&grid, &dens.iter().zip(&natural).map(|(p, v)| p * (v - nat_mean).powi(2)).collect::<Vec<_>>());
        marginals.push(HyperMarginal {
            name: h.name.clone(),
            natural_name: h.natural_name(),
            internal: grid,
            internal_density: dens,
            natural,
            natural_density,
            internal_mean: mean,
            internal_sd: sd,
            natural_mean: nat_mean,
            natural_sd: nat_var.max(0.0).sqrt(),
        });
    }

    // Latent marginals as a Gaussian mixture over the design.
    let n = model.n_latent();
    let spatial_block = model.components.iter().position(|c| matches!(c.kind, ComponentKind::Spde { .. }));
    let pairs: Vec<(u32, u32)> = match spatial_block {
        Some(b) => match &model.components[b].kind {
            ComponentKind::Spde { ops, .. } => {
                let mut p: Vec<(u32, u32)> = ops.g.triplets().into_iter().filter(|&(i, j, _)| i < j).map(|(i, j, _)| (i as u32, j as u32)).collect();
                p.sort_unstable();
                p
            }
            _ => unreachable!(),
        },
        None => Vec::new(),
    };
    let offset = spatial_block.map(|b| model.block_range(b).start).unwrap_or(0);
    let per_point: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = kept
        .par_iter()
        .map(|p| {
            let ga = p.approx.as_ref().unwrap();
            match ga.selected_inverse() {
                Some(sel) => {
                    let var = ga.marginal_variances(&sel);
                    let edge = pairs
                        .iter()
                        .map(|&(i, j)| {
                            let (a, b) = (offset + i as usize, offset + j as usize);
                            ga.covariance(&sel, a, b).unwrap_or(0.0) + ga.mode[a] * ga.mode[b]
                        })
                        .collect();
                    (ga.mode.clone(), var, edge)
                }
                None => (Vec::new(), Vec::new(), Vec::new()),
            }
        })
        .collect();
    let mut mean = vec![0.0; n];
    let mut second = vec![0.0; n];
    let mut edge_moment = vec![0.0; pairs.len()];
    for (dp, (mu, var, edge)) in design.iter().zip(&per_point) {
        for i in 0..n {
            mean[i] += dp.weight * mu[i];
            second[i] += dp.weight * (var[i] + mu[i] * mu[i]);
        }
        for (e, v) in edge_moment.iter_mut().zip(edge) {
            *e += dp.weight * v;
        }
    }
    let sd: Vec<f64> = (0..n).map(|i| (second[i] - mean[i] * mean[i]).max(0.0).sqrt()).collect();
    let spatial = spatial_block.map(|b| SpatialMoments {
        block: model.components[b].name.clone(),
        offset,
        pairs,
        second_moment: edge_moment,
    });
    let blocks = model
        .components
        .iter()
        .enumerate()
        .map(|(k, c)| BlockInfo { name: c.name.clone(), start: model.block_range(k).start, len: c.size })
        .collect();

    let estimates = point_estimates(model, &design);
    let all = model.all_hypers();
    let free_set: Vec<bool> = all.iter().map(|h| free_hypers.iter().any(|f| f.name == h.name)).collect();
    Ok(PosteriorResult {
        hyper_names: all.iter().map(|h| h.name.clone()).collect(),
        free: free_set,
        mode,
        covariance: (0..d).map(|i| (0..d).map(|j| cov[(i, j)]).collect()).collect(),
        design,
        marginals,
        blocks,
        latent_mean: mean,
        latent_sd: sd,
        spatial,
        estimates,
        diagnostics: Diagnostics {
            strategy,
            outer_iterations: search.iterations,
            mode_converged: search.converged,
            evaluations,
            design_points: n_pts,
            dropped_points: n_pts - kept.len(),
        },
    })
}

fn point_estimates(model: &LatentGaussianModel, design: &[DesignPoint]) -> PointEstimates {
    let all = model.all_hypers();
    let find = |pred: &dyn Fn(HyperKind) -> bool| all.iter().position(|h| pred(h.kind));
    let alpha = match model.likelihood {
        Likelihood::Weibull { .. } => find(&|k| k == HyperKind::LogAlpha).map(|i| weighted(design, |t| t[i].exp())),
        _ => None,
    };
    let sigma2_e = match model.likelihood {
        Likelihood::Gaussian { .. } => find(&|k| k == HyperKind::LogLikPrecision).map(|i| weighted(design, |t| (-t[i]).exp())),
        _ => None,
    };
    let lk = find(&|k| matches!(k, HyperKind::LogKappa(_)));
    let lt = find(&|k| matches!(k, HyperKind::LogTau(_)));
    let (sigma2_x, kappa, nominal_range, tau) = match (lk, lt) {
        (Some(a), Some(b)) => (
            Some(weighted(design, |t| crate::spde::marginal_variance(t[a].exp(), t[b].exp(), 1.0))),
            Some(weighted(design, |t| t[a].exp())),
            Some(weighted(design, |t| 8f64.sqrt() / t[a].exp())),
            Some(weighted(design, |t| t[b].exp())),
        ),
        _ => (None, None, None, None),
    };
    PointEstimates { alpha, sigma2_e, sigma2_x, kappa, nominal_range, tau }
}

/// One row of the mesh-comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub sigma2_e: Option<f64>,
    pub sigma2_x: Option<f64>,
    pub kappa: Option<f64>,
    pub nominal_range: Option<f64>,
    pub tau: Option<f64>,
    pub alpha: Option<f64>,
    pub n_vertices: usize,
    pub cpu_seconds: f64,
}

pub fn fit_report(result: &PosteriorResult, n_vertices: usize, cpu_seconds: f64) -> FitSummary {
    let e = &result.estimates;
    let m = |x: Option<Estimate>| x.map(|v| v.mean);
    FitSummary {
        sigma2_e: m(e.sigma2_e),
        sigma2_x: m(e.sigma2_x),
        kappa: m(e.kappa),
        nominal_range: m(e.nominal_range),
        tau: m(e.tau),
        alpha: m(e.alpha),
        n_vertices,
        cpu_seconds,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into())
}

/// `hyperparameter,internal,value,density` rows for every free hyperparameter.
pub fn write_marginals_csv(result: &PosteriorResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["hyperparameter", "internal", "value", "density"])?;
    for m in &result.marginals {
        for i in 0..m.internal.len() {
            w.write_record([m.natural_name.clone(), m.internal[i].to_string(), m.natural[i].to_string(), m.natural_density[i].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `component,index,mean,sd` for every latent value.
pub fn write_latent_csv(result: &PosteriorResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["component", "index", "mean", "sd"])?;
    for b in &result.blocks {
        for i in 0..b.len {
            let k = b.start + i;
            w.write_record([b.name.clone(), i.to_string(), result.latent_mean[k].to_string(), result.latent_sd[k].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Design points with their log posterior and weight.
pub fn write_design_csv(result: &PosteriorResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = vec!["point".into()];
    header.extend(result.hyper_names.iter().cloned());
    header.extend(["log_post".into(), "weight".into()]);
    w.write_record(&header)?;
    for (k, p) in result.design.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(p.theta.iter().map(|v| v.to_string()));
        row.extend([p.log_post.to_string(), p.weight.to_string()]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `parameter,mean,sd` rows in the reporting order.
pub fn write_estimates_csv(result: &PosteriorResult, path: &Path) -> Result<()> {
    let e = &result.estimates;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "parameter,mean,sd")?;
    for (name, v) in [
        ("sigma2_e", e.sigma2_e),
        ("sigma2_x", e.sigma2_x),
        ("kappa", e.kappa),
        ("nominal_range", e.nominal_range),
        ("tau", e.tau),
        ("alpha", e.alpha),
    ] {
        writeln!(f, "{name},{},{}", fmt_opt(v.map(|x| x.mean)), fmt_opt(v.map(|x| x.sd)))?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fractional_factorial_resolution() {
        assert_eq!(fractional_factorial(2).len(), 4);
        assert_eq!(fractional_factorial(5).len(), 16);
        assert_eq!(fractional_factorial(8).len(), 64);
        for d in 2..=9 {
            let rows = fractional_factorial(d);
            assert!(rows.iter().all(|r| r.len() == d));
        }
    }

    #[test]
    fn ccd_weights_match_gaussian_moments() {
        for d in 1..=8 {
            let pts = ccd_points(d, 1.1);
            let logw: Vec<f64> = pts.iter().map(|(z, lw)| lw - 0.5 * z.iter().map(|v| v * v).sum::<f64>()).collect();
            let w: Vec<f64> = logw.iter().map(|v| v.exp()).collect();
            let tot: f64 = w.iter().sum();
            for j in 0..d {
                let m2: f64 = pts.iter().zip(&w).map(|((z, _), w)| w * z[j] * z[j]).sum::<f64>() / tot;
                assert!((m2 - 1.0).abs() < 1e-12, "d={d} m2={m2}");
            }
        }
    }
}
