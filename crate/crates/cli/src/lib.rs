//! Commands behind the `windspde` binary.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use windspde::config::RunConfig;
use windspde::inference::{explore, fit_report, FitSummary, PosteriorResult};
use windspde::ingest::{conglomerate, jitter, read_prime, sample, write_prime, WindRecord};
use windspde::latent::{build_model, record_locations, ModelSpec};
use windspde::mesh::{build_mesh, Mesh, MeshSpec, Point};
use windspde::project::{project_field, write_gnuplot, write_grid, FieldGrid, Lattice};
use windspde::simulate::{simulate_design, simulate_response, Truth};
use windspde::timing::Stopwatch;
use windspde::{Error, Result};

/// Settings shared by every command.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub config_path: Option<PathBuf>,
    pub seed: u64,
    pub threads: Option<usize>,
    pub out_dir: PathBuf,
}

impl Context {
    pub fn new(config: RunConfig, out_dir: &Path) -> Self {
        Self { seed: config.seed, config, config_path: None, threads: None, out_dir: out_dir.to_path_buf() }
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn prepare(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir)?;
        Ok(())
    }
}

/// One timed phase in a metadata file.
#[derive(Debug, Clone)]
pub struct Phase {
    pub name: String,
    pub cpu_seconds: f64,
    pub wall_seconds: f64,
}

impl Phase {
    fn from(name: &str, sw: &Stopwatch) -> Self {
        Self { name: name.to_string(), cpu_seconds: sw.cpu(), wall_seconds: sw.wall() }
    }
}

/// Writes `<command>_metadata.txt` with versions, the effective config and timings.
pub fn write_metadata(ctx: &Context, command: &str, phases: &[Phase], notes: &[String]) -> Result<PathBuf> {
    let path = ctx.out(&format!("{}_metadata.txt", command.replace('-', "_")));
    let mut s = String::new();
    writeln!(s, "command: {command}").unwrap();
    writeln!(s, "windspde version: {}", env!("CARGO_PKG_VERSION")).unwrap();
    writeln!(s, "arguments: {}", std::env::args().collect::<Vec<_>>().join(" ")).unwrap();
    writeln!(s, "config file: {}", ctx.config_path.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "(defaults)".into())).unwrap();
    writeln!(s, "seed: {}", ctx.seed).unwrap();
    writeln!(s, "threads: {}", rayon::current_num_threads()).unwrap();
    for p in phases {
        writeln!(s, "phase {}: cpu_seconds = {:.3}, wall_seconds = {:.3}", p.name, p.cpu_seconds, p.wall_seconds).unwrap();
    }
    for n in notes {
        writeln!(s, "{n}").unwrap();
    }
    writeln!(s, "\n# effective configuration\n{}", ctx.config.to_toml()).unwrap();
    std::fs::write(&path, s)?;
    Ok(path)
}

fn prime_path(ctx: &Context, flag: Option<&Path>) -> Result<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| ctx.config.data.prime.clone())
        .ok_or_else(|| Error::Config("no prime dataset given (use --prime or data.prime)".into()))
}

pub fn cmd_ingest(ctx: &Context, raw: &[PathBuf]) -> Result<Vec<WindRecord>> {
    ctx.prepare()?;
    let sw = Stopwatch::start();
    let d = &ctx.config.data;
    let paths = if raw.is_empty() { d.raw.clone() } else { raw.to_vec() };
    if paths.is_empty() {
        return Err(Error::Config("no raw files given (use --raw or data.raw)".into()));
    }
    let stations = d.station_table()?;
    let (records, report) = conglomerate(&paths, &stations, &d.ingest_options())?;
    let mut records = jitter(&records, d.jitter_radius, ctx.seed)?;
    if let Some(n) = d.sample_size {
        records = sample(&records, n, ctx.seed.wrapping_add(1))?;
    }
    write_prime(&records, &ctx.out("prime.csv"))?;
    std::fs::write(ctx.out("skip_report.txt"), report.to_string())?;
    write_metadata(ctx, "ingest", &[Phase::from("ingest", &sw)], &[format!("records written: {}", records.len())])?;
    Ok(records)
}

pub fn mesh_report(mesh: &Mesh, spec: &MeshSpec) -> String {
    let mut s = String::new();
    writeln!(s, "vertices: {}", mesh.n_vertices()).unwrap();
    writeln!(s, "triangles: {}", mesh.n_triangles()).unwrap();
    writeln!(s, "area: {}", mesh.total_area()).unwrap();
    writeln!(s, "spec: me1 = {}, me2 = {}, of1 = {}, of2 = {}, cutoff = {}", spec.me1, spec.me2, spec.of1, spec.of2, spec.cutoff).unwrap();
    for w in spec.warnings() {
        writeln!(s, "warning: {w}").unwrap();
    }
    s
}

pub fn cmd_mesh(ctx: &Context, prime: Option<&Path>) -> Result<Mesh> {
    ctx.prepare()?;
    let records = read_prime(&prime_path(ctx, prime)?)?;
    let sw = Stopwatch::start();
    let spec = ctx.config.mesh.spec;
    let mesh = build_mesh(&record_locations(&records), &spec)?;
    let phase = Phase::from("mesh", &sw);
    mesh.write_json(&ctx.out("mesh.json"))?;
    std::fs::write(ctx.out("mesh_report.txt"), mesh_report(&mesh, &spec))?;
    write_metadata(ctx, "mesh", &[phase], &[format!("vertices: {}", mesh.n_vertices())])?;
    Ok(mesh)
}

/// Fits the model on `records` with `mesh`; returns the posterior and inference CPU seconds.
pub fn fit_records(ctx: &Context, records: &[WindRecord], mesh: Arc<Mesh>) -> Result<(PosteriorResult, f64)> {
    let spec = ModelSpec::from_records(records, mesh, ctx.config.priors, ctx.config.model)?;
    let model = build_model(records, &spec)?;
    let sw = Stopwatch::start();
    let result = explore(&model, &ctx.config.inference)?;
    Ok((result, sw.cpu()))
}

fn load_fit_data(ctx: &Context, prime: Option<&Path>) -> Result<Vec<WindRecord>> {
    let records = read_prime(&prime_path(ctx, prime)?)?;
    match ctx.config.data.sample_size {
        Some(n) if n < records.len() => sample(&records, n, ctx.seed),
        _ => Ok(records),
    }
}

pub fn cmd_fit(ctx: &Context, prime: Option<&Path>, mesh_path: Option<&Path>) -> Result<PosteriorResult> {
    ctx.prepare()?;
    let records = load_fit_data(ctx, prime)?;
    let sw_mesh = Stopwatch::start();
    let mesh = match mesh_path.map(Path::to_path_buf).or_else(|| ctx.config.mesh.file.clone()) {
        Some(p) => Mesh::read_json(&p)?,
        None => build_mesh(&record_locations(&records), &ctx.config.mesh.spec)?,
    };
    let mesh_phase = Phase::from("mesh", &sw_mesh);
    mesh.write_json(&ctx.out("mesh.json"))?;
    let sw = Stopwatch::start();
    let (result, _) = fit_records(ctx, &records, Arc::new(mesh))?;
    let fit_phase = Phase::from("inference", &sw);
    result.write_json(&ctx.out("posterior.json"))?;
    windspde::inference::explore::write_marginals_csv(&result, &ctx.out("hyper_marginals.csv"))?;
    windspde::inference::explore::write_latent_csv(&result, &ctx.out("latent_summary.csv"))?;
    windspde::inference::explore::write_design_csv(&result, &ctx.out("design.csv"))?;
    windspde::inference::explore::write_estimates_csv(&result, &ctx.out("estimates.csv"))?;
    let d = &result.diagnostics;
    let notes = vec![
        format!("records: {}", records.len()),
        format!("strategy: {:?}", d.strategy),
        format!("outer iterations: {} (converged: {})", d.outer_iterations, d.mode_converged),
        format!("posterior evaluations: {}", d.evaluations),
        format!("design points: {} ({} dropped)", d.design_points, d.dropped_points),
    ];
    write_metadata(ctx, "fit", &[mesh_phase, fit_phase], &notes)?;
    Ok(result)
}

/// One candidate mesh in a mesh-selection run.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshSelectRow {
    pub name: String,
    pub spec: MeshSpec,
    pub summary: std::result::Result<FitSummary, String>,
    /// First candidate whose estimates changed by less than the tolerance.
    pub stable: bool,
}

impl MeshSelectRow {
    fn params(&self) -> Option<[f64; 4]> {
        let s = self.summary.as_ref().ok()?;
        Some([s.sigma2_x?, s.kappa?, s.nominal_range?, s.tau?])
    }
}

/// Index of the first row whose Matérn estimates all moved by less than `tol`
/// relative to the previous row.
pub fn first_stable(rows: &[MeshSelectRow], tol: f64) -> Option<usize> {
    (1..rows.len()).find(|&k| match (rows[k - 1].params(), rows[k].params()) {
        (Some(a), Some(b)) => a.iter().zip(&b).all(|(x, y)| ((y - x) / x).abs() < tol),
        _ => false,
    })
}

pub fn run_mesh_select(ctx: &Context, records: &[WindRecord]) -> Result<Vec<MeshSelectRow>> {
    let candidates = ctx.config.mesh_select.candidates();
    if candidates.len() < 2 {
        return Err(Error::Config("mesh-select needs at least two mesh specs".into()));
    }
    let locations = record_locations(records);
    let one = |(name, spec): &(String, MeshSpec)| -> MeshSelectRow {
        let summary = build_mesh(&locations, spec).and_then(|mesh| {
            let n = mesh.n_vertices();
            fit_records(ctx, records, Arc::new(mesh)).map(|(r, cpu)| fit_report(&r, n, cpu))
        });
        MeshSelectRow { name: name.clone(), spec: *spec, summary: summary.map_err(|e| e.to_string()), stable: false }
    };
    let mut rows: Vec<MeshSelectRow> =
        if ctx.config.mesh_select.parallel { candidates.par_iter().map(one).collect() } else { candidates.iter().map(one).collect() };
    if let Some(k) = first_stable(&rows, ctx.config.mesh_select.tolerance) {
        rows[k].stable = true;
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into())
}

/// Deterministic comparison table (no timings).
pub fn write_mesh_select_csv(rows: &[MeshSelectRow], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "mesh,me1,me2,of1,of2,cutoff,vertices,sigma2_e,sigma2_x,kappa,nominal_range,tau,alpha,stable,status")?;
    for r in rows {
        let s = &r.spec;
        let (cols, status) = match &r.summary {
            Ok(m) => (
                format!(
                    "{},{},{},{},{},{},{}",
                    m.n_vertices,
                    opt(m.sigma2_e),
                    opt(m.sigma2_x),
                    opt(m.kappa),
                    opt(m.nominal_range),
                    opt(m.tau),
                    opt(m.alpha)
                ),
                "ok".to_string(),
            ),
            Err(e) => ("NA,NA,NA,NA,NA,NA,NA".to_string(), format!("\"error: {}\"", e.replace('"', "'"))),
        };
        writeln!(f, "{},{},{},{},{},{},{cols},{},{status}", r.name, s.me1, s.me2, s.of1, s.of2, s.cutoff, u8::from(r.stable))?;
    }
    f.flush()?;
    Ok(())
}

pub fn write_mesh_select_timing(rows: &[MeshSelectRow], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "mesh,vertices,cpu_seconds")?;
    for r in rows {
        match &r.summary {
            Ok(m) => writeln!(f, "{},{},{:.3}", r.name, m.n_vertices, m.cpu_seconds)?,
            Err(_) => writeln!(f, "{},NA,NA", r.name)?,
        }
    }
    f.flush()?;
    Ok(())
}

pub fn mesh_select_table(rows: &[MeshSelectRow]) -> String {
    let mut s = String::new();
    let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "NA".into());
    writeln!(s, "{:<8} {:>6} {:>6} {:>5} {:>5} {:>6} {:>8} {:>9} {:>9} {:>9} {:>9} {:>9} {:>8}", "mesh", "me1", "me2", "of1", "of2", "cu", "vertices", "cpu_s", "sigma2_x", "kappa", "range", "tau", "stable").unwrap();
    for r in rows {
        let sp = &r.spec;
        match &r.summary {
            Ok(m) => writeln!(
                s,
                "{:<8} {:>6} {:>6} {:>5} {:>5} {:>6} {:>8} {:>9.2} {:>9} {:>9} {:>9} {:>9} {:>8}",
                r.name,
                sp.me1,
                sp.me2,
                sp.of1,
                sp.of2,
                sp.cutoff,
                m.n_vertices,
                m.cpu_seconds,
                f(m.sigma2_x),
                f(m.kappa),
                f(m.nominal_range),
                f(m.tau),
                if r.stable { "<- stable" } else { "" }
            )
            .unwrap(),
            Err(e) => writeln!(s, "{:<8} failed: {e}", r.name).unwrap(),
        }
    }
    s
}

pub fn cmd_mesh_select(ctx: &Context, prime: Option<&Path>) -> Result<Vec<MeshSelectRow>> {
    ctx.prepare()?;
    let records = read_prime(&prime_path(ctx, prime)?)?;
    let n = ctx.config.mesh_select.sample_size;
    let records = if n < records.len() { sample(&records, n, ctx.seed)? } else { records };
    let sw = Stopwatch::start();
    let rows = run_mesh_select(ctx, &records)?;
    let phase = Phase::from("mesh-select", &sw);
    write_mesh_select_csv(&rows, &ctx.out("mesh_select.csv"))?;
    write_mesh_select_timing(&rows, &ctx.out("mesh_select_timing.csv"))?;
    let table = mesh_select_table(&rows);
    std::fs::write(ctx.out("mesh_select.txt"), &table)?;
    write_metadata(ctx, "mesh-select", &[phase], &[format!("records: {}", records.len())])?;
    Ok(rows)
}

pub fn cmd_project(ctx: &Context, posterior: Option<&Path>, mesh_path: Option<&Path>) -> Result<FieldGrid> {
    ctx.prepare()?;
    let pc = &ctx.config.project;
    let post_path = posterior.map(Path::to_path_buf).or_else(|| pc.posterior.clone()).unwrap_or_else(|| ctx.out("posterior.json"));
    let mesh_path = mesh_path.map(Path::to_path_buf).or_else(|| pc.mesh.clone()).unwrap_or_else(|| ctx.out("mesh.json"));
    let result = PosteriorResult::read_json(&post_path)?;
    let mesh = Mesh::read_json(&mesh_path)?;
    let lattice = match pc.bounds {
        Some(b) => Lattice { lon_min: b[0], lon_max: b[1], lat_min: b[2], lat_max: b[3], step: pc.step },
        None => Lattice::from_mesh(&mesh, pc.step),
    };
    let sw = Stopwatch::start();
    let grid = project_field(&result, &mesh, &lattice)?;
    let phase = Phase::from("project", &sw);
    write_grid(&grid, &ctx.out("field_grid.csv"))?;
    write_gnuplot(&grid, &ctx.out("field_grid.dat"))?;
    let sites: Vec<Point> = ctx.config.data.station_table()?.stations.values().map(|s| [s.longitude, s.latitude]).collect();
    let (near, far) = grid.sd_contrast(&sites, 0.5, 3.0);
    let means: Vec<f64> = grid.unmasked_means().collect();
    let lo = means.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let notes = vec![
        format!("nodes: {} ({} masked)", grid.nodes.len(), grid.masked.iter().filter(|m| **m).count()),
        format!("mean range: [{lo}, {hi}]"),
        format!("mean sd within 0.5 deg of a station: {}", opt(near)),
        format!("mean sd beyond 3 deg of every station: {}", opt(far)),
    ];
    write_metadata(ctx, "project", &[phase], &notes)?;
    Ok(grid)
}

pub fn cmd_simulate(ctx: &Context) -> Result<(Vec<WindRecord>, Truth)> {
    ctx.prepare()?;
    let sw = Stopwatch::start();
    let stations = ctx.config.data.station_table()?;
    let skeleton = simulate_design(&ctx.config.simulate, &stations, ctx.seed)?;
    let mesh = Arc::new(build_mesh(&record_locations(&skeleton), &ctx.config.mesh.spec)?);
    let spec = ModelSpec::from_records(&skeleton, Arc::clone(&mesh), ctx.config.priors, ctx.config.model)?;
    let (records, truth) = simulate_response(&skeleton, &spec, &ctx.config.simulate.truth, ctx.seed.wrapping_add(2))?;
    let phase = Phase::from("simulate", &sw);
    write_prime(&records, &ctx.out("prime.csv"))?;
    mesh.write_json(&ctx.out("mesh.json"))?;
    std::fs::write(ctx.out("truth.json"), serde_json::to_string_pretty(&truth)?)?;
    write_metadata(ctx, "simulate", &[phase], &[format!("records: {}", records.len()), format!("mesh vertices: {}", mesh.n_vertices())])?;
    Ok((records, truth))
}
