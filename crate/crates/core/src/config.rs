//! TOML run configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::explore::ExploreOptions;
use crate::ingest::{IngestOptions, StationTable};
use crate::latent::{PriorSpec, Switches};
use crate::mesh::MeshSpec;
use crate::priors::PrecisionPrior;
use crate::simulate::SimulationSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Station coordinates CSV; the built-in ten-site table when absent.
    pub stations: Option<PathBuf>,
    /// Raw per-station files for `ingest`.
    pub raw: Vec<PathBuf>,
    pub delimiter: char,
    pub min_speed: f64,
    /// `[year, month]` of consecutive month 1; the earliest record when absent.
    pub origin: Option<(i32, u32)>,
    /// Prime dataset read by `mesh`, `mesh-select` and `fit`.
    pub prime: Option<PathBuf>,
    pub jitter_radius: f64,
    /// Records kept by `ingest` and used by `fit`; all when absent.
    pub sample_size: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            stations: None,
            raw: Vec::new(),
            delimiter: ',',
            min_speed: 0.0,
            origin: None,
            prime: None,
            jitter_radius: 0.05,
            sample_size: None,
        }
    }
}

impl DataConfig {
    pub fn station_table(&self) -> Result<StationTable> {
        match &self.stations {
            Some(p) => StationTable::read_csv(p),
            None => Ok(StationTable::wasa()),
        }
    }

    pub fn ingest_options(&self) -> IngestOptions {
        IngestOptions { delimiter: self.delimiter, min_speed: self.min_speed, origin: self.origin }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshConfig {
    #[serde(flatten)]
    pub spec: MeshSpec,
    /// Existing mesh JSON used by `fit` instead of building one.
    pub file: Option<PathBuf>,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self { spec: MeshSpec::new(0.55, 0.55, 0.15, 0.15, 0.55), file: None }
    }
}

/// The eight candidate meshes of the default mesh study.
pub fn table3_specs() -> Vec<(String, MeshSpec)> {
    [
        ("Mesh-A", 1.0, 0.30, 0.95),
        ("Mesh-B", 0.90, 0.20, 0.90),
        ("Mesh-C", 0.75, 0.15, 0.75),
        ("Mesh-D", 0.725, 0.15, 0.725),
        ("Mesh-E", 0.55, 0.15, 0.55),
        ("Mesh-F", 0.50, 0.15, 0.50),
        ("Mesh-G", 0.45, 0.15, 0.45),
        ("Mesh-H", 0.40, 0.15, 0.40),
    ]
    .into_iter()
    .map(|(name, me, of, cu)| (name.to_string(), MeshSpec::new(me, me, of, of, cu)))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedMeshSpec {
    pub name: String,
    #[serde(flatten)]
    pub spec: MeshSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshSelectConfig {
    /// Candidate meshes; the eight-mesh study when empty.
    pub specs: Vec<NamedMeshSpec>,
    pub sample_size: usize,
    /// Relative change below which successive estimates count as stable.
    pub tolerance: f64,
    /// Fit candidate meshes concurrently (CPU timings become less comparable).
    pub parallel: bool,
}

impl Default for MeshSelectConfig {
    fn default() -> Self {
        Self { specs: Vec::new(), sample_size: 5000, tolerance: 0.1, parallel: false }
    }
}

impl MeshSelectConfig {
    pub fn candidates(&self) -> Vec<(String, MeshSpec)> {
        if self.specs.is_empty() {
            table3_specs()
        } else {
            self.specs.iter().map(|s| (s.name.clone(), s.spec)).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectConfig {
    pub step: f64,
    /// `[lon_min, lon_max, lat_min, lat_max]`; the inner mesh domain when absent.
    pub bounds: Option<[f64; 4]>,
    pub posterior: Option<PathBuf>,
    pub mesh: Option<PathBuf>,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        Self { step: 0.1, bounds: None, posterior: None, mesh: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub mesh: MeshConfig,
    pub mesh_select: MeshSelectConfig,
    pub model: Switches,
    pub priors: PriorSpec,
    pub inference: ExploreOptions,
    pub project: ProjectConfig,
    pub simulate: SimulationSpec,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if !(d.jitter_radius >= 0.0 && d.jitter_radius.is_finite()) {
            return Err(Error::Config(format!("data.jitter_radius must be non-negative, got {}", d.jitter_radius)));
        }
        if let Some((_, m)) = d.origin {
            if !(1..=12).contains(&m) {
                return Err(Error::Config(format!("data.origin month must be in 1..=12, got {m}")));
            }
        }
        if d.sample_size == Some(0) {
            return Err(Error::Config("data.sample_size must be positive".into()));
        }
        self.mesh.spec.validate()?;
        for s in &self.mesh_select.specs {
            s.spec.validate().map_err(|e| Error::Config(format!("mesh_select spec '{}': {e}", s.name)))?;
        }
        if !(self.mesh_select.tolerance > 0.0) {
            return Err(Error::Config("mesh_select.tolerance must be positive".into()));
        }
        if self.mesh_select.sample_size == 0 {
            return Err(Error::Config("mesh_select.sample_size must be positive".into()));
        }
        validate_priors(&self.priors)?;
        self.inference.validate()?;
        if !(self.project.step > 0.0 && self.project.step.is_finite()) {
            return Err(Error::Config(format!("project.step must be positive, got {}", self.project.step)));
        }
        if let Some(b) = self.project.bounds {
            if !(b[0] <= b[1] && b[2] <= b[3]) || b.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("project.bounds must be [lon_min, lon_max, lat_min, lat_max], got {b:?}")));
            }
        }
        self.simulate.validate()
    }
}

fn check_precision(name: &str, p: &PrecisionPrior) -> Result<()> {
    if !(p.u > 0.0 && p.u.is_finite() && p.p > 0.0 && p.p < 1.0) {
        return Err(Error::Config(format!("priors.{name} needs u > 0 and 0 < p < 1, got u = {}, p = {}", p.u, p.p)));
    }
    Ok(())
}

fn validate_priors(p: &PriorSpec) -> Result<()> {
    if !(p.shape.theta > 0.0 && p.shape.theta.is_finite()) {
        return Err(Error::Config(format!("priors.shape.theta must be positive, got {}", p.shape.theta)));
    }
    check_precision("spline", &p.spline)?;
    for (name, a) in [("f_month", &p.f_month), ("c_month", &p.c_month)] {
        check_precision(&format!("{name}.precision"), &a.precision)?;
        if !(a.rho.sd > 0.0 && a.rho.sd.is_finite()) {
            return Err(Error::Config(format!("priors.{name}.rho.sd must be positive, got {}", a.rho.sd)));
        }
    }
    if let Some(m) = &p.spatial {
        let ok = m.range0 > 0.0 && m.sigma0 > 0.0 && m.p_range > 0.0 && m.p_range < 1.0 && m.p_sigma > 0.0 && m.p_sigma < 1.0;
        if !ok {
            return Err(Error::Config(format!("priors.spatial needs positive range0/sigma0 and probabilities in (0, 1), got {m:?}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.mesh_select.candidates().len(), 8);
    }

    #[test]
    fn round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(matches!(RunConfig::from_toml("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[mesh]\nme3 = 1.0"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[priors.shape]\ntheta = 5\nextra = 1"), Err(Error::Config(_))));
        let full = "me1 = 0.4, me2 = 0.4, of1 = 0.1, of2 = 0.1, cutoff = 0.4";
        let mesh = format!("[mesh]\n{}\nbogus = 2", full.replace(", ", "\n"));
        assert!(matches!(RunConfig::from_toml(&mesh), Err(Error::Config(_))));
        let sel = format!("[mesh_select]\nspecs = [{{name = \"a\", {full}, zzz = 1}}]");
        assert!(matches!(RunConfig::from_toml(&sel), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_values_are_errors() {
        assert!(matches!(RunConfig::from_toml("[mesh]\nme1 = -1.0"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[priors.shape]\ntheta = 0.0"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[inference]\nstrategy = \"mcmc\""), Err(Error::Config(_))));
    }

    #[test]
    fn partial_sections() {
        let c = RunConfig::from_toml("seed = 9\n[mesh]\nme1 = 0.4\nme2 = 0.4\nof1 = 0.1\nof2 = 0.1\ncutoff = 0.4\n[inference]\nstrategy = \"ccd\"").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.mesh.spec.me1, 0.4);
        assert_eq!(c.inference.strategy, crate::inference::Strategy::Ccd);
    }
}

