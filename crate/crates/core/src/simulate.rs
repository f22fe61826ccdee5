//! Synthetic wind records drawn from the full model at known parameters.

use chrono::{Datelike, Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Weibull};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{jitter, StationTable, WindRecord};
use crate::latent::{build_design, HyperParams, LatentState, ModelSpec};
use crate::spde::{sample_field, MaternParams};

/// Default measurement heights in metres.
pub const DEFAULT_ALTITUDES: [f64; 5] = [10.0, 20.0, 40.0, 60.0, 62.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrueParams {
    pub alpha: f64,
    /// Nominal range in degrees.
    pub range: f64,
    pub sigma_x: f64,
    /// Intercept, cosine and sine direction effects.
    pub beta: [f64; 3],
    pub spline_sd: f64,
    pub f_month_sd: f64,
    pub f_month_rho: f64,
    pub c_month_sd: f64,
    pub c_month_rho: f64,
}

impl Default for TrueParams {
    fn default() -> Self {
        Self {
            alpha: 1.5,
            range: 2.0,
            sigma_x: 0.3,
            beta: [1.9, 0.1, -0.15],
            spline_sd: 0.3,
            f_month_sd: 0.2,
            f_month_rho: 0.5,
            c_month_sd: 0.15,
            c_month_rho: 0.7,
        }
    }
}

impl TrueParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("range", self.range),
            ("sigma_x", self.sigma_x),
            ("spline_sd", self.spline_sd),
            ("f_month_sd", self.f_month_sd),
            ("c_month_sd", self.c_month_sd),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("simulate.truth.{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("f_month_rho", self.f_month_rho), ("c_month_rho", self.c_month_rho)] {
            if !(v.abs() < 1.0) {
                return Err(Error::Config(format!("simulate.truth.{name} must lie in (-1, 1), got {v}")));
            }
        }
        Ok(())
    }

    pub fn matern(&self) -> MaternParams {
        MaternParams::from_range_sd(self.range, self.sigma_x, 1.0)
    }

    pub fn hyper(&self) -> HyperParams {
        let m = self.matern();
        HyperParams {
            alpha: self.alpha,
            log_kappa: m.kappa.ln(),
            log_tau: m.tau.ln(),
            rho_f: self.f_month_rho,
            rho_c: self.c_month_rho,
            log_prec_f: -2.0 * self.f_month_sd.ln(),
            log_prec_c: -2.0 * self.c_month_sd.ln(),
            log_prec_rw2: -2.0 * self.spline_sd.ln(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSpec {
    pub n: usize,
    /// Number of consecutive months covered.
    pub months: usize,
    pub start_year: i32,
    pub start_month: u32,
    pub altitudes: Vec<f64>,
    pub jitter_radius: f64,
    pub truth: TrueParams,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            n: 2000,
            months: 24,
            start_year: 2010,
            start_month: 1,
            altitudes: DEFAULT_ALTITUDES.to_vec(),
            jitter_radius: 0.05,
            truth: TrueParams::default(),
        }
    }
}

impl SimulationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.months == 0 {
            return Err(Error::Config("simulate.months must be at least 1".into()));
        }
        if !(1..=12).contains(&self.start_month) {
            return Err(Error::Config(format!("simulate.start_month must be in 1..=12, got {}", self.start_month)));
        }
        if self.altitudes.is_empty() || self.altitudes.iter().any(|a| !a.is_finite()) {
            return Err(Error::Config("simulate.altitudes must be a non-empty list of finite heights".into()));
        }
        self.truth.validate()
    }
}

/// Latent values and hyperparameters used to generate a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub params: TrueParams,
    pub kappa: f64,
    pub tau: f64,
    pub beta: Vec<f64>,
    pub spline: Vec<f64>,
    pub f_month_effect: Vec<f64>,
    pub c_month_effect: Vec<f64>,
    pub spatial: Vec<f64>,
}

/// Record skeletons at jittered station locations; wind speeds are placeholders.
pub fn simulate_design(spec: &SimulationSpec, stations: &StationTable, seed: u64) -> Result<Vec<WindRecord>> {
    spec.validate()?;
    if stations.is_empty() {
        return Err(Error::Data("no stations to simulate at".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<(&String, _)> = stations.stations.iter().collect();
    let origin = NaiveDate::from_ymd_opt(spec.start_year, spec.start_month, 1)
        .ok_or_else(|| Error::Config("invalid simulation start date".into()))?;
    let mut records = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let (id, st) = ids[i % ids.len()];
        let c = rng.random_range(0..spec.months as u32);
        let month0 = origin.month0() + c;
        let (year, month) = (origin.year() + (month0 / 12) as i32, month0 % 12 + 1);
        let first = NaiveDate::from_ymd_opt(year, month, 1).unwrap();
        let minutes = rng.random_range(0..28 * 24 * 6) as i64 * 10;
        let date_time = first.and_hms_opt(0, 0, 0).unwrap() + Duration::minutes(minutes);
        let altitude = spec.altitudes[rng.random_range(0..spec.altitudes.len())];
        let dir: f64 = rng.random_range(0.0..360.0);
        let rad = dir.to_radians();
        records.push(WindRecord {
            station_id: id.clone(),
            date_time,
            latitude: st.latitude,
            longitude: st.longitude,
            year,
            month,
            altitude,
            wind_speed: 1.0,
            wind_direct_avg: dir,
            cos_direct: rad.cos(),
            sin_direct: rad.sin(),
            f_month: month,
            c_month: c + 1,
        });
    }
    jitter(&records, spec.jitter_radius, seed.wrapping_add(1))
}

fn centred(mut v: Vec<f64>) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len().max(1) as f64;
    v.iter_mut().for_each(|x| *x -= m);
    v
}

fn ar1_draw(rng: &mut ChaCha8Rng, n: usize, sd: f64, rho: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut prev: f64 = sd * rng.sample::<f64, _>(StandardNormal);
    out.push(prev);
    let innov = sd * (1.0 - rho * rho).sqrt();
    for _ in 1..n {
        prev = rho * prev + innov * rng.sample::<f64, _>(StandardNormal);
        out.push(prev);
    }
    centred(out)
}

/// Draws latent effects and Weibull wind speeds for `records` under `model`.
pub fn simulate_response(records: &[WindRecord], model: &ModelSpec, truth: &TrueParams, seed: u64) -> Result<(Vec<WindRecord>, Truth)> {
    truth.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = LatentState::zeros(model);
    state.beta = truth.beta.to_vec();
    if model.switches.spline {
        // Second differences are white noise; the linear trend is zero.
        let k = model.altitude_knots.len();
        let mut s = vec![0.0; k];
        for i in 2..k {
            s[i] = 2.0 * s[i - 1] - s[i - 2] + truth.spline_sd * rng.sample::<f64, _>(StandardNormal);
        }
        state.spline = centred(s);
    }
    if model.switches.f_month {
        state.f_month_effect = ar1_draw(&mut rng, model.n_f_month, truth.f_month_sd, truth.f_month_rho);
    }
    if model.switches.c_month {
        state.c_month_effect = ar1_draw(&mut rng, model.n_c_month, truth.c_month_sd, truth.c_month_rho);
    }
    let m = truth.matern();
    if model.switches.spatial {
        let q = crate::spde::precision(&model.ops, m.kappa, m.tau)?;
        state.spatial = sample_field(&q, rng.random())?;
    }
    let design = build_design(records, model)?;
    let eta = design.eta(model, &state);
    let mut out = records.to_vec();
    for (r, e) in out.iter_mut().zip(&eta) {
        let w = Weibull::new(e.exp(), truth.alpha).map_err(|err| Error::Numerical(format!("Weibull draw failed: {err}")))?;
        r.wind_speed = w.sample(&mut rng);
    }
    let t = Truth {
        params: truth.clone(),
        kappa: m.kappa,
        tau: m.tau,
        beta: state.beta,
        spline: state.spline,
        f_month_effect: state.f_month_effect,
        c_month_effect: state.c_month_effect,
        spatial: state.spatial,
    };
    Ok((out, t))
}
