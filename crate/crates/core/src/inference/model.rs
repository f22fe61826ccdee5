//! Generic latent Gaussian model: latent blocks with hyperparameter-dependent
//! precisions, a linear predictor and an observation likelihood.

use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::latent::{ar1_precision, rw2_precision};
use crate::priors::{internal_to_rho, pc_prior_logpdf, Ar1HyperSpec, MaternPrior, PcPriorSpec, PrecisionPrior};
use crate::sparse::{CsrMatrix, SymbolicCholesky};
use crate::spde::SpdeOperators;

#[derive(Debug, Clone)]
pub enum ComponentKind {
    /// Independent Gaussian coefficients with a fixed precision.
    Fixed { precision: f64 },
    /// Exchangeable effect with unknown precision.
    Iid { prior: PrecisionPrior },
    /// Second-order random walk `τ DᵀD + εI`.
    Rw2 { prior: PrecisionPrior, jitter: f64 },
    /// Stationary AR(1) with marginal precision `τ` and lag-one correlation `ρ`.
    Ar1 { prior: Ar1HyperSpec },
    /// SPDE Matérn field on a mesh.
    Spde { ops: Arc<SpdeOperators>, prior: MaternPrior },
}

#[derive(Debug, Clone)]
pub struct Component {
    pub name: String,
    pub size: usize,
    pub kind: ComponentKind,
    /// Impose `Σ x = 0` on this block.
    pub sum_to_zero: bool,
}

impl Component {
    pub fn new(name: &str, size: usize, kind: ComponentKind) -> Self {
        Self { name: name.to_string(), size, kind, sum_to_zero: false }
    }

    pub fn constrained(mut self) -> Self {
        self.sum_to_zero = true;
        self
    }
}

#[derive(Debug, Clone)]
pub enum Likelihood {
    /// Weibull with `λ = exp(η)` and PC-prior shape.
    Weibull { prior: PcPriorSpec },
    /// Gaussian with identity link.
    Gaussian { prior: PrecisionPrior },
}

/// Role of one hyperparameter in internal (unconstrained) coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HyperKind {
    LogAlpha,
    LogLikPrecision,
    LogPrecision(usize),
    Ar1Rho(usize),
    LogKappa(usize),
    LogTau(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperInfo {
    pub name: String,
    pub kind: HyperKind,
}

impl HyperInfo {
    /// Natural-scale value of an internal coordinate.
    pub fn to_natural(&self, t: f64) -> f64 {
        match self.kind {
            HyperKind::Ar1Rho(_) => internal_to_rho(t),
            _ => t.exp(),
        }
    }

    /// `log |d natural / d internal|`.
    pub fn log_jacobian(&self, t: f64) -> f64 {
        match self.kind {
            HyperKind::Ar1Rho(_) => {
                let r = internal_to_rho(t);
                ((1.0 - r * r) / 2.0).ln()
            }
            _ => t,
        }
    }

    pub fn natural_name(&self) -> String {
        let (prefix, suffix) = match self.name.split_once('.') {
            Some((p, s)) => (p, s),
            None => ("", self.name.as_str()),
        };
        let s = suffix.strip_prefix("log_").unwrap_or(suffix);
        if prefix.is_empty() {
            s.to_string()
        } else {
            format!("{prefix}.{s}")
        }
    }
}

/// Precomputed patterns and slot maps shared by every evaluation.
#[derive(Debug)]
pub(crate) struct Workspace {
    pub q_pattern: CsrMatrix,
    pub block_values: Vec<Range<usize>>,
    pub rw2_templates: Vec<Option<(Vec<f64>, Vec<bool>)>>,
    pub sym_prior: Arc<SymbolicCholesky>,
    pub prior_slots: Vec<Option<usize>>,
    pub sym_post: Arc<SymbolicCholesky>,
    pub post_prior_slots: Vec<Option<usize>>,
    pub pair_ptr: Vec<usize>,
    pub pair_slots: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct LatentGaussianModel {
    pub components: Vec<Component>,
    pub likelihood: Likelihood,
    pub y: Vec<f64>,
    pub log_y: Vec<f64>,
    pub offset: Vec<f64>,
    /// `n_obs × n_latent` predictor matrix.
    pub predictor: CsrMatrix,
    starts: Vec<usize>,
    hypers: Vec<HyperInfo>,
    fixed: BTreeMap<usize, f64>,
    pub(crate) ws: Arc<Workspace>,
}

impl LatentGaussianModel {
    pub fn new(components: Vec<Component>, likelihood: Likelihood, y: Vec<f64>, predictor: CsrMatrix) -> Result<Self> {
        let n_latent: usize = components.iter().map(|c| c.size).sum();
        if predictor.nrows() != y.len() || predictor.ncols() != n_latent {
            return Err(Error::Data(format!(
                "predictor is {}x{} but there are {} observations and {} latent values",
                predictor.nrows(),
                predictor.ncols(),
                y.len(),
                n_latent
            )));
        }
        if let Likelihood::Weibull { .. } = likelihood {
            if let Some(i) = y.iter().position(|&v| !(v > 0.0)) {
                return Err(Error::Data(format!("observation {i} is not positive ({})", y[i])));
            }
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("observation {i} is not finite")));
        }
        let mut starts = Vec::with_capacity(components.len() + 1);
        let mut acc = 0;
        for c in &components {
            starts.push(acc);
            acc += c.size;
            validate_component(c)?;
        }
        starts.push(acc);
        let mut hypers = vec![match likelihood {
            Likelihood::Weibull { .. } => HyperInfo { name: "lik.log_alpha".into(), kind: HyperKind::LogAlpha },
            Likelihood::Gaussian { .. } => HyperInfo { name: "lik.log_precision".into(), kind: HyperKind::LogLikPrecision },
        }];
        for (k, c) in components.iter().enumerate() {
            let mut push = |suffix: &str, kind| hypers.push(HyperInfo { name: format!("{}.{suffix}", c.name), kind });
            match c.kind {
                ComponentKind::Fixed { .. } => {}
                ComponentKind::Iid { .. } | ComponentKind::Rw2 { .. } => push("log_precision", HyperKind::LogPrecision(k)),
                ComponentKind::Ar1 { .. } => {
                    push("log_precision", HyperKind::LogPrecision(k));
                    push("rho", HyperKind::Ar1Rho(k));
                }
                ComponentKind::Spde { .. } => {
                    push("log_kappa", HyperKind::LogKappa(k));
                    push("log_tau", HyperKind::LogTau(k));
                }
            }
        }
        let log_y = y.iter().map(|v| if *v > 0.0 { v.ln() } else { f64::NAN }).collect();
        let ws = Arc::new(build_workspace(&components, &starts, &predictor));
        Ok(Self { components, likelihood, offset: vec![0.0; y.len()], log_y, y, predictor, starts, hypers, fixed: BTreeMap::new(), ws })
    }

    pub fn with_offset(mut self, offset: Vec<f64>) -> Result<Self> {
        if offset.len() != self.y.len() {
            return Err(Error::Data("offset length differs from the number of observations".into()));
        }
        self.offset = offset;
        Ok(self)
    }

    /// Holds the named internal hyperparameter at `value` during inference.
    pub fn fix(mut self, name: &str, value: f64) -> Result<Self> {
        let k = self
            .hypers
            .iter()
            .position(|h| h.name == name)
            .ok_or_else(|| Error::Config(format!("unknown hyperparameter '{name}' (known: {})", self.hyper_names().join(", "))))?;
        self.fixed.insert(k, value);
        Ok(self)
    }

    pub fn n_latent(&self) -> usize {
        *self.starts.last().unwrap()
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn block_range(&self, k: usize) -> Range<usize> {
        self.starts[k]..self.starts[k + 1]
    }

    pub fn component_index(&self, name: &str) -> Option<usize> {
        self.components.iter().position(|c| c.name == name)
    }

    /// Every hyperparameter, including held ones.
    pub fn all_hypers(&self) -> &[HyperInfo] {
        &self.hypers
    }

    fn hyper_names(&self) -> Vec<String> {
        self.hypers.iter().map(|h| h.name.clone()).collect()
    }

    /// Hyperparameters that are inferred.
    pub fn free_hypers(&self) -> Vec<HyperInfo> {
        (0..self.hypers.len()).filter(|k| !self.fixed.contains_key(k)).map(|k| self.hypers[k].clone()).collect()
    }

    pub fn n_free(&self) -> usize {
        self.hypers.len() - self.fixed.len()
    }

    /// Full internal vector from the free coordinates.
    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        assert_eq!(free.len(), self.n_free());
        let mut it = free.iter();
        (0..self.hypers.len()).map(|k| self.fixed.get(&k).copied().unwrap_or_else(|| *it.next().unwrap())).collect()
    }

    pub fn theta_by_name(&self, full: &[f64], name: &str) -> Option<f64> {
        self.hypers.iter().position(|h| h.name == name).map(|k| full[k])
    }

    /// Starting point for the mode search.
    pub fn initial_free(&self) -> Vec<f64> {
        let mut full = Vec::with_capacity(self.hypers.len());
        for h in &self.hypers {
            full.push(match h.kind {
                HyperKind::LogKappa(c) => match &self.components[c].kind {
                    ComponentKind::Spde { prior, .. } => (8f64.sqrt() / prior.range0).ln(),
                    _ => 0.0,
                },
                HyperKind::LogTau(c) => match &self.components[c].kind {
                    ComponentKind::Spde { prior, .. } => {
                        let kappa = 8f64.sqrt() / prior.range0;
                        let sigma = 0.5 * prior.sigma0;
                        -(0.5 * (4.0 * std::f64::consts::PI).ln() + kappa.ln() + sigma.ln())
                    }
                    _ => 0.0,
                },
                HyperKind::LogPrecision(_) | HyperKind::LogLikPrecision => 2.0,
                _ => 0.0,
            });
        }
        (0..self.hypers.len()).filter(|k| !self.fixed.contains_key(k)).map(|k| full[k]).collect()
    }

    /// Log prior density of the free internal coordinates.
    pub fn log_prior(&self, full: &[f64]) -> f64 {
        let mut lp = 0.0;
        for (k, h) in self.hypers.iter().enumerate() {
            if self.fixed.contains_key(&k) {
                continue;
            }
            let t = full[k];
            lp += match h.kind {
                HyperKind::LogAlpha => match &self.likelihood {
                    Likelihood::Weibull { prior } => pc_prior_logpdf(t.exp(), prior) + t,
                    _ => unreachable!(),
                },
                HyperKind::LogLikPrecision => match &self.likelihood {
                    Likelihood::Gaussian { prior } => prior.log_scale_logpdf(t),
                    _ => unreachable!(),
                },
                HyperKind::LogPrecision(c) => match &self.components[c].kind {
                    ComponentKind::Iid { prior } | ComponentKind::Rw2 { prior, .. } => prior.log_scale_logpdf(t),
                    ComponentKind::Ar1 { prior } => prior.precision.log_scale_logpdf(t),
                    _ => unreachable!(),
                },
                HyperKind::Ar1Rho(c) => match &self.components[c].kind {
                    ComponentKind::Ar1 { prior } => prior.rho.internal_logpdf(t),
                    _ => unreachable!(),
                },
                HyperKind::LogKappa(c) => match &self.components[c].kind {
                    ComponentKind::Spde { prior, .. } => {
                        let lt = self.hypers.iter().position(|h| h.kind == HyperKind::LogTau(c)).unwrap();
                        prior.internal_logpdf(t, full[lt])
                    }
                    _ => unreachable!(),
                },
                // Counted jointly with log κ.
                HyperKind::LogTau(c) => {
                    let lk = self.hypers.iter().position(|h| h.kind == HyperKind::LogKappa(c)).unwrap();
                    if self.fixed.contains_key(&lk) {
                        match &self.components[c].kind {
                            ComponentKind::Spde { prior, .. } => prior.internal_logpdf(full[lk], t),
                            _ => unreachable!(),
                        }
                    } else {
                        0.0
                    }
                }
            };
        }
        lp
    }

    /// Values of the prior precision on the shared pattern.
    pub(crate) fn prior_values(&self, full: &[f64]) -> Result<Vec<f64>> {
        let mut vals = vec![0.0; self.ws.q_pattern.nnz()];
        let find = |kind: HyperKind| self.hypers.iter().position(|h| h.kind == kind).map(|k| full[k]);
        for (k, c) in self.components.iter().enumerate() {
            let out = &mut vals[self.ws.block_values[k].clone()];
            match &c.kind {
                ComponentKind::Fixed { precision } => out.fill(*precision),
                ComponentKind::Iid { .. } => out.fill(find(HyperKind::LogPrecision(k)).unwrap().exp()),
                ComponentKind::Rw2 { jitter, .. } => {
                    let tau = find(HyperKind::LogPrecision(k)).unwrap().exp();
                    let (template, diag) = self.ws.rw2_templates[k].as_ref().unwrap();
                    for (p, o) in out.iter_mut().enumerate() {
                        *o = tau * template[p] + if diag[p] { *jitter } else { 0.0 };
                    }
                }
                ComponentKind::Ar1 { .. } => {
                    let tau = find(HyperKind::LogPrecision(k)).unwrap().exp();
                    let rho = internal_to_rho(find(HyperKind::Ar1Rho(k)).unwrap());
                    let q = ar1_precision(c.size, rho, tau)?;
                    out.copy_from_slice(q.values());
                }
                ComponentKind::Spde { ops, .. } => {
                    let kappa = find(HyperKind::LogKappa(k)).unwrap().exp();
                    let tau = find(HyperKind::LogTau(k)).unwrap().exp();
                    ops.precision_values(kappa, tau, out);
                }
            }
        }
        if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("prior precision entry {i} is not finite")));
        }
        Ok(vals)
    }

    /// Prior precision as a sparse matrix.
    pub fn prior_precision(&self, full: &[f64]) -> Result<CsrMatrix> {
        let mut q = self.ws.q_pattern.clone();
        q.values_mut().copy_from_slice(&self.prior_values(full)?);
        Ok(q)
    }

    /// Index ranges carrying a sum-to-zero constraint.
    pub fn constraints(&self) -> Vec<Range<usize>> {
        (0..self.components.len()).filter(|&k| self.components[k].sum_to_zero).map(|k| self.block_range(k)).collect()
    }

    /// Observation log-density with first and negative second derivatives in η.
    #[inline]
    pub(crate) fn obs_terms(&self, i: usize, eta: f64, lik_theta: f64) -> (f64, f64, f64) {
        match self.likelihood {
            Likelihood::Weibull { .. } => {
                let alpha = lik_theta.exp();
                let z = alpha * (self.log_y[i] - eta);
                let t = z.exp();
                (lik_theta + (alpha - 1.0) * self.log_y[i] - alpha * eta - t, alpha * (t - 1.0), alpha * alpha * t)
            }
            Likelihood::Gaussian { .. } => {
                let tau = lik_theta.exp();
                let r = self.y[i] - eta;
                (0.5 * (lik_theta - (2.0 * std::f64::consts::PI).ln()) - 0.5 * tau * r * r, tau * r, tau)
            }
        }
    }
}

fn validate_component(c: &Component) -> Result<()> {
    match &c.kind {
        ComponentKind::Fixed { precision } if !(*precision > 0.0) => {
            Err(Error::Config(format!("component '{}' needs a positive fixed precision", c.name)))
        }
        ComponentKind::Rw2 { .. } if c.size < 3 => Err(Error::Config(format!("RW2 component '{}' needs at least 3 knots", c.name))),
        ComponentKind::Spde { ops, .. } if ops.n() != c.size => {
            Err(Error::Config(format!("SPDE component '{}' has {} values but the mesh has {}", c.name, c.size, ops.n())))
        }
        _ if c.size == 0 => Err(Error::Config(format!("component '{}' is empty", c.name))),
        _ => Ok(()),
    }
}

fn block_pattern(c: &Component) -> Result<CsrMatrix> {
    Ok(match &c.kind {
        ComponentKind::Fixed { .. } | ComponentKind::Iid { .. } => CsrMatrix::identity(c.size),
        ComponentKind::Rw2 { .. } => rw2_precision(c.size, 1.0)?,
        ComponentKind::Ar1 { .. } => ar1_precision(c.size, 0.5, 1.0)?,
        ComponentKind::Spde { ops, .. } => ops.pattern().clone(),
    })
}

fn build_workspace(components: &[Component], starts: &[usize], predictor: &CsrMatrix) -> Workspace {
    let n = *starts.last().unwrap();
    let mut trip = Vec::new();
    let mut rw2_templates = Vec::with_capacity(components.len());
    for (k, c) in components.iter().enumerate() {
        let pat = block_pattern(c).expect("validated component");
        rw2_templates.push(matches!(c.kind, ComponentKind::Rw2 { .. }).then(|| {
            let diag = (0..c.size).flat_map(|i| pat.row(i).0.iter().map(move |&j| i == j)).collect();
            (pat.values().to_vec(), diag)
        }));
        trip.extend(pat.triplets().into_iter().map(|(i, j, _)| (starts[k] + i, starts[k] + j, 1.0)));
    }
    let q_pattern = CsrMatrix::from_triplets(n, n, &trip);
    let block_values = (0..components.len()).map(|k| q_pattern.indptr()[starts[k]]..q_pattern.indptr()[starts[k + 1]]).collect();

    let prior_entries: Vec<(usize, usize)> = trip.iter().map(|&(i, j, _)| (i, j)).collect();
    let sym_prior = SymbolicCholesky::analyze(n, &prior_entries);
    let prior_slots = sym_prior.slot_map(&q_pattern);

    let mut post_entries = prior_entries;
    for i in 0..predictor.nrows() {
        let cols = predictor.row(i).0;
        for a in 0..cols.len() {
            for b in a + 1..cols.len() {
                post_entries.push((cols[a], cols[b]));
            }
        }
    }
    post_entries.sort_unstable();
    post_entries.dedup();
    let sym_post = SymbolicCholesky::analyze(n, &post_entries);
    let post_prior_slots = sym_post.slot_map(&q_pattern);
    let mut pair_ptr = Vec::with_capacity(predictor.nrows() + 1);
    let mut pair_slots = Vec::new();
    pair_ptr.push(0);
    for i in 0..predictor.nrows() {
        let cols = predictor.row(i).0;
        for a in 0..cols.len() {
            for b in a..cols.len() {
                pair_slots.push(sym_post.slot(cols[a], cols[b]).expect("pair in pattern") as u32);
            }
        }
        pair_ptr.push(pair_slots.len());
    }
    Workspace { q_pattern, block_values, rw2_templates, sym_prior, prior_slots, sym_post, post_prior_slots, pair_ptr, pair_slots }
}
