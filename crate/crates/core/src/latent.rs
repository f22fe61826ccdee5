//! The wind-speed latent model: fixed direction effects, an RW2 altitude
//! spline, AR(1) effects for the calendar month and the consecutive month,
//! and the SPDE spatial field.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::model::{Component, ComponentKind, LatentGaussianModel, Likelihood};
use crate::ingest::WindRecord;
use crate::mesh::{projector, Mesh, Point};
use crate::priors::{Ar1HyperSpec, MaternPrior, PcPriorSpec, PrecisionPrior};
use crate::sparse::CsrMatrix;
use crate::spde::{assemble_fem, SpdeOperators};

/// `precision · DᵀD` with `D` the `(K−2)×K` second-difference operator.
pub fn rw2_precision(k: usize, precision: f64) -> Result<CsrMatrix> {
    if k < 3 {
        return Err(Error::Config(format!("RW2 needs at least 3 knots, got {k}")));
    }
    let mut trip = Vec::with_capacity(9 * (k - 2));
    let d = [1.0, -2.0, 1.0];
    for r in 0..k - 2 {
        for a in 0..3 {
            for b in 0..3 {
                trip.push((r + a, r + b, precision * d[a] * d[b]));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(k, k, &trip))
}

/// Stationary AR(1) precision with marginal precision `precision`.
pub fn ar1_precision(n: usize, rho: f64, precision: f64) -> Result<CsrMatrix> {
    if !(rho.abs() < 1.0) {
        return Err(Error::Config(format!("AR(1) correlation must satisfy |rho| < 1, got {rho}")));
    }
    if n == 0 {
        return Err(Error::Config("AR(1) needs at least one index".into()));
    }
    if n == 1 {
        return Ok(CsrMatrix::from_diagonal(&[precision]));
    }
    let s = precision / (1.0 - rho * rho);
    let mut trip = Vec::with_capacity(3 * n);
    for i in 0..n {
        let interior = i > 0 && i + 1 < n;
        trip.push((i, i, s * if interior { 1.0 + rho * rho } else { 1.0 }));
        if i + 1 < n {
            trip.push((i, i + 1, -s * rho));
            trip.push((i + 1, i, -s * rho));
        }
    }
    Ok(CsrMatrix::from_triplets(n, n, &trip))
}

/// On/off switches for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Switches {
    #[serde(default = "yes")]
    pub spline: bool,
    #[serde(default = "yes")]
    pub f_month: bool,
    #[serde(default = "yes")]
    pub c_month: bool,
    #[serde(default = "yes")]
    pub spatial: bool,
}

fn yes() -> bool {
    true
}

impl Default for Switches {
    fn default() -> Self {
        Self { spline: true, f_month: true, c_month: true, spatial: true }
    }
}

/// Hyperprior settings for the latent blocks and the likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    #[serde(default)]
    pub shape: PcPriorSpec,
    #[serde(default)]
    pub spline: PrecisionPrior,
    #[serde(default)]
    pub f_month: Ar1HyperSpec,
    #[serde(default)]
    pub c_month: Ar1HyperSpec,
    /// Matérn prior; `range0` defaults to a fifth of the mesh extent when unset.
    #[serde(default)]
    pub spatial: Option<MaternPrior>,
}

pub const FIXED_PRECISION: f64 = 1e-4;
pub const RW2_JITTER: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub altitude_knots: Vec<f64>,
    pub n_f_month: usize,
    pub n_c_month: usize,
    pub mesh: Arc<Mesh>,
    pub ops: Arc<SpdeOperators>,
    pub priors: PriorSpec,
    pub switches: Switches,
}

impl ModelSpec {
    /// Knots at the distinct altitudes and `n_c_month` from the records.
    pub fn from_records(records: &[WindRecord], mesh: Arc<Mesh>, priors: PriorSpec, switches: Switches) -> Result<Self> {
        let mut knots: Vec<f64> = records.iter().map(|r| r.altitude).collect();
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let n_c_month = records.iter().map(|r| r.c_month as usize).max().unwrap_or(1);
        let ops = Arc::new(assemble_fem(&mesh)?);
        Ok(Self { altitude_knots: knots, n_f_month: 12, n_c_month, mesh, ops, priors, switches })
    }

    fn validate(&self) -> Result<()> {
        if self.altitude_knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("altitude knots must be sorted and distinct".into()));
        }
        if self.n_c_month == 0 {
            return Err(Error::Config("n_c_month must be at least 1".into()));
        }
        if self.switches.spline && self.altitude_knots.len() < 3 {
            return Err(Error::Data(format!(
                "the RW2 altitude spline needs at least 3 altitude levels, found {}",
                self.altitude_knots.len()
            )));
        }
        Ok(())
    }

    pub fn n_spline(&self) -> usize {
        if self.switches.spline {
            self.altitude_knots.len()
        } else {
            0
        }
    }

    fn sizes(&self) -> [usize; 5] {
        [
            3,
            self.n_spline(),
            if self.switches.f_month { self.n_f_month } else { 0 },
            if self.switches.c_month { self.n_c_month } else { 0 },
            if self.switches.spatial { self.mesh.n_vertices() } else { 0 },
        ]
    }

    pub fn latent_len(&self) -> usize {
        self.sizes().iter().sum()
    }

    pub fn matern_prior(&self) -> MaternPrior {
        self.priors.spatial.unwrap_or_else(|| {
            let [lo, hi] = self.mesh.inner_bbox();
            let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]);
            MaternPrior { range0: 0.2 * extent, ..MaternPrior::default() }
        })
    }
}

/// Latent vector in block form, ordered beta, spline, f_month, c_month, spatial.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub beta: Vec<f64>,
    pub spline: Vec<f64>,
    pub f_month_effect: Vec<f64>,
    pub c_month_effect: Vec<f64>,
    pub spatial: Vec<f64>,
}

impl LatentState {
    pub fn zeros(spec: &ModelSpec) -> Self {
        let s = spec.sizes();
        Self { beta: vec![0.0; s[0]], spline: vec![0.0; s[1]], f_month_effect: vec![0.0; s[2]], c_month_effect: vec![0.0; s[3]], spatial: vec![0.0; s[4]] }
    }

    pub fn len(&self) -> usize {
        self.beta.len() + self.spline.len() + self.f_month_effect.len() + self.c_month_effect.len() + self.spatial.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        [&self.beta, &self.spline, &self.f_month_effect, &self.c_month_effect, &self.spatial].into_iter().flatten().copied().collect()
    }

    pub fn from_vec(spec: &ModelSpec, v: &[f64]) -> Result<Self> {
        let s = spec.sizes();
        if v.len() != s.iter().sum::<usize>() {
            return Err(Error::Data(format!("latent vector has length {} but the model needs {}", v.len(), s.iter().sum::<usize>())));
        }
        let mut at = 0;
        let mut take = |n: usize| {
            let out = v[at..at + n].to_vec();
            at += n;
            out
        };
        Ok(Self { beta: take(s[0]), spline: take(s[1]), f_month_effect: take(s[2]), c_month_effect: take(s[3]), spatial: take(s[4]) })
    }
}

/// Per-record design pieces.
#[derive(Debug, Clone)]
pub struct Design {
    /// Rows `(1, cos_direct, sin_direct)`.
    pub x: Vec<[f64; 3]>,
    pub spline_index: Vec<usize>,
    pub f_month_index: Vec<usize>,
    pub c_month_index: Vec<usize>,
    /// Spatial projector from mesh vertices to record locations.
    pub a: CsrMatrix,
}

impl Design {
    /// Full `n × latent_len` predictor matrix in [`LatentState`] order.
    pub fn predictor(&self, spec: &ModelSpec) -> CsrMatrix {
        let s = spec.sizes();
        let off = [0, s[0], s[0] + s[1], s[0] + s[1] + s[2], s[0] + s[1] + s[2] + s[3]];
        let n = self.x.len();
        let mut trip = Vec::with_capacity(9 * n);
        for i in 0..n {
            for k in 0..3 {
                trip.push((i, k, self.x[i][k]));
            }
            if s[1] > 0 {
                trip.push((i, off[1] + self.spline_index[i], 1.0));
            }
            if s[2] > 0 {
                trip.push((i, off[2] + self.f_month_index[i], 1.0));
            }
            if s[3] > 0 {
                trip.push((i, off[3] + self.c_month_index[i], 1.0));
            }
            if s[4] > 0 {
                let (cols, vals) = self.a.row(i);
                trip.extend(cols.iter().zip(vals).map(|(&j, &v)| (i, off[4] + j, v)));
            }
        }
        CsrMatrix::from_triplets(n, spec.latent_len(), &trip)
    }

    /// `η` computed record by record.
    pub fn eta(&self, spec: &ModelSpec, state: &LatentState) -> Vec<f64> {
        let spatial = if spec.switches.spatial { self.a.mul_vec(&state.spatial) } else { vec![0.0; self.x.len()] };
        (0..self.x.len())
            .map(|i| {
                let mut e: f64 = (0..3).map(|k| self.x[i][k] * state.beta[k]).sum();
                if spec.switches.spline {
                    e += state.spline[self.spline_index[i]];
                }
                if spec.switches.f_month {
                    e += state.f_month_effect[self.f_month_index[i]];
                }
                if spec.switches.c_month {
                    e += state.c_month_effect[self.c_month_index[i]];
                }
                e + spatial[i]
            })
            .collect()
    }
}

pub fn record_locations(records: &[WindRecord]) -> Vec<Point> {
    records.iter().map(|r| [r.longitude, r.latitude]).collect()
}

pub fn build_design(records: &[WindRecord], spec: &ModelSpec) -> Result<Design> {
    let mut x = Vec::with_capacity(records.len());
    let mut spline_index = Vec::with_capacity(records.len());
    let mut f_month_index = Vec::with_capacity(records.len());
    let mut c_month_index = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        x.push([1.0, r.cos_direct, r.sin_direct]);
        if spec.switches.spline {
            let k = spec.altitude_knots.iter().position(|&a| a == r.altitude).ok_or_else(|| {
                Error::Data(format!("record {i} has altitude {} which is not a knot (known knots: {:?})", r.altitude, spec.altitude_knots))
            })?;
            spline_index.push(k);
        }
        if !(1..=spec.n_f_month as u32).contains(&r.f_month) {
            return Err(Error::Data(format!("record {i} has f_month {} outside 1..={}", r.f_month, spec.n_f_month)));
        }
        if !(1..=spec.n_c_month as u32).contains(&r.c_month) {
            return Err(Error::Data(format!("record {i} has c_month {} outside 1..={}", r.c_month, spec.n_c_month)));
        }
        f_month_index.push(r.f_month as usize - 1);
        c_month_index.push(r.c_month as usize - 1);
    }
    let a = if spec.switches.spatial {
        let p = projector(&spec.mesh, &record_locations(records));
        if p.outside > 0 {
            return Err(Error::Data(format!("{} record location(s) fall outside the mesh", p.outside)));
        }
        p.matrix
    } else {
        CsrMatrix::zeros(records.len(), 0)
    };
    Ok(Design { x, spline_index, f_month_index, c_month_index, a })
}

/// The Weibull model for `records` ready for inference.
pub fn build_model(records: &[WindRecord], spec: &ModelSpec) -> Result<LatentGaussianModel> {
    spec.validate()?;
    let design = build_design(records, spec)?;
    let mut comps = vec![Component::new("beta", 3, ComponentKind::Fixed { precision: FIXED_PRECISION })];
    if spec.switches.spline {
        comps.push(
            Component::new("spline", spec.n_spline(), ComponentKind::Rw2 { prior: spec.priors.spline, jitter: RW2_JITTER }).constrained(),
        );
    }
    if spec.switches.f_month {
        comps.push(Component::new("f_month", spec.n_f_month, ComponentKind::Ar1 { prior: spec.priors.f_month }).constrained());
    }
    if spec.switches.c_month {
        comps.push(Component::new("c_month", spec.n_c_month, ComponentKind::Ar1 { prior: spec.priors.c_month }).constrained());
    }
    if spec.switches.spatial {
        comps.push(Component::new(
            "spatial",
            spec.mesh.n_vertices(),
            ComponentKind::Spde { ops: Arc::clone(&spec.ops), prior: spec.matern_prior() },
        ));
    }
    let y = records.iter().map(|r| r.wind_speed).collect();
    LatentGaussianModel::new(comps, Likelihood::Weibull { prior: spec.priors.shape }, y, design.predictor(spec))
}

/// Natural-scale hyperparameters of the wind model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub alpha: f64,
    pub log_kappa: f64,
    pub log_tau: f64,
    pub rho_f: f64,
    pub rho_c: f64,
    pub log_prec_f: f64,
    pub log_prec_c: f64,
    pub log_prec_rw2: f64,
}

impl HyperParams {
    /// Internal coordinates in the order of the model's hyperparameters.
    /// Internal-scale value of the hyperparameter called `name`.
    pub fn internal(&self, name: &str) -> Option<f64> {
        use crate::priors::rho_to_internal;
        Some(match name {
            "lik.log_alpha" => self.alpha.ln(),
            "spline.log_precision" => self.log_prec_rw2,
            "f_month.log_precision" => self.log_prec_f,
            "f_month.rho" => rho_to_internal(self.rho_f),
            "c_month.log_precision" => self.log_prec_c,
            "c_month.rho" => rho_to_internal(self.rho_c),
            "spatial.log_kappa" => self.log_kappa,
            "spatial.log_tau" => self.log_tau,
            _ => return None,
        })
    }

    pub fn to_internal(&self, model: &LatentGaussianModel) -> Vec<f64> {
        model
            .all_hypers()
            .iter()
            .map(|h| self.internal(&h.name).unwrap_or_else(|| panic!("unexpected hyperparameter {}", h.name)))
            .collect()
    }
}

/// Joint prior precision and sum-to-zero constraint blocks.
#[derive(Debug, Clone)]
pub struct JointPrecision {
    pub matrix: CsrMatrix,
    pub constraints: Vec<std::ops::Range<usize>>,
}

pub fn assemble_joint(model: &LatentGaussianModel, hyper: &HyperParams) -> Result<JointPrecision> {
    let full = hyper.to_internal(model);
    Ok(JointPrecision { matrix: model.prior_precision(&full)?, constraints: model.constraints() })
}
