//! Acceptance harness: one PASS / FAIL / SKIP line per criterion.
//!
//! Run with `cargo test -p windspde-cli --test acceptance`; append criterion
//! numbers after `--` to run a subset. The process exits non-zero on a FAIL
//! only when `ACCEPTANCE_STRICT` is set. Criterion 7 runs when
//! `WINDSPDE_PRIME` names an ingested prime dataset of the real measurements.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Weibull};
use windspde::config::RunConfig;
use windspde::inference::explore::{write_design_csv, write_marginals_csv};
use windspde::inference::{explore, gaussian_approx, log_posterior_hyper, Component, ComponentKind, ExploreOptions, LatentGaussianModel, Likelihood, NewtonOptions};
use windspde::ingest::StationTable;
use windspde::mesh::{build_mesh, Mesh, MeshSpec, Point};
use windspde::priors::{pc_prior_logpdf, weibull_kld_derivative_factor, weibull_kld_distance_slope, weibull_logpdf, PcPriorSpec, PrecisionPrior};
use windspde::simulate::Truth;
use windspde::sparse::CsrMatrix;
use windspde::spde::{assemble_fem, matern_correlation, precision};
use windspde_cli::{cmd_fit, cmd_mesh_select, cmd_project, cmd_simulate, Context};
use windspde_oracles::{dense, quad};

#[derive(Debug, PartialEq)]
enum Status {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    status: Status,
    detail: String,
}

impl Outcome {
    fn check(ok: bool, detail: String) -> Self {
        Self { status: if ok { Status::Pass } else { Status::Fail }, detail }
    }
}

type Criterion = fn(&Path) -> Outcome;

// ---------------------------------------------------------------------------
// 1. Matérn correlation of the discretised field.

/// Largest |correlation error| over pairs of vertices inside the unit square
/// at distances in [0.05, 0.4], and the number of such pairs.
fn matern_agreement(mesh: &Mesh, kappa: f64) -> (f64, usize) {
    let ops = assemble_fem(mesh).unwrap();
    let q = precision(&ops, kappa, 1.0).unwrap();
    let cov = dense::inverse(&q.to_dense());
    let inside: Vec<usize> =
        (0..mesh.n_vertices()).filter(|&i| mesh.vertices[i].iter().all(|c| (0.0..=1.0).contains(c))).collect();
    let (mut worst, mut pairs) = (0.0f64, 0usize);
    for (a, &i) in inside.iter().enumerate() {
        for &j in &inside[a + 1..] {
            let (p, r) = (mesh.vertices[i], mesh.vertices[j]);
            let d = (p[0] - r[0]).hypot(p[1] - r[1]);
            if !(0.05..=0.4).contains(&d) {
                continue;
            }
            let c = cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt();
            worst = worst.max((c - matern_correlation(d, kappa, 1.0)).abs());
            pairs += 1;
        }
    }
    (worst, pairs)
}

fn criterion_1(_: &Path) -> Outcome {
    let kappa = 10.0;
    let t0 = Instant::now();
    // 39 x 39 lattice over the unit square plus a 0.2 buffer against the
    // Neumann boundary.
    let n = 39;
    let h = 1.4 / (n - 1) as f64;
    let lattice: Vec<Point> = (0..n * n).map(|k| [-0.2 + (k % n) as f64 * h, -0.2 + (k / n) as f64 * h]).collect();
    let mesh = match Mesh::from_points(&lattice) {
        Ok(m) => m,
        Err(e) => return Outcome::check(false, format!("mesh failed: {e}")),
    };
    let (worst, pairs) = matern_agreement(&mesh, kappa);
    let secs = t0.elapsed().as_secs_f64();
    // Same vertex budget from the refining mesher, reported for reference.
    let square = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    let refined = build_mesh(&square, &MeshSpec::new(0.05, 0.3, 0.02, 0.6, 0.0))
        .map(|m| {
            let (w, _) = matern_agreement(&m, kappa);
            format!("refined mesh with {} vertices: {w:.4}", m.n_vertices())
        })
        .unwrap_or_else(|e| format!("refined mesh failed: {e}"));
    Outcome::check(
        worst < 0.05 && secs < 60.0 && pairs > 0,
        format!("lattice mesh {} vertices, {pairs} pairs, max |corr error| = {worst:.4} (< 0.05), {secs:.1} s (< 60); {refined}", mesh.n_vertices()),
    )
}

// ---------------------------------------------------------------------------
// 2. PC prior for the Weibull shape.

/// KL divergence to the unit exponential by quadrature, after `u = y^α = e^s`.
fn kld_quadrature(alpha: f64) -> f64 {
    let f = |s: f64| {
        let u = s.exp();
        let w = (s - u).exp();
        if w == 0.0 {
            return 0.0;
        }
        w * (alpha.ln() + (alpha - 1.0) / alpha * s - u + (s / alpha).exp())
    };
    quad::integrate(f, -60.0, 6.0, 1e-15)
}

fn criterion_2(_: &Path) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for theta in [2.0, 5.0, 10.0] {
        let spec = PcPriorSpec { theta };
        let g = |t: f64| (pc_prior_logpdf(t.exp(), &spec) + t).exp();
        let mass = quad::integrate(g, -12.0, 0.0, 1e-12) + quad::integrate(g, 0.0, 500.0, 1e-12);
        ok &= (mass - 1.0).abs() < 1e-3;
        lines.push(format!("mass(theta={theta}) = {mass:.6}"));
    }
    let h = 1e-4;
    for alpha in [0.5, 1.5, 3.0] {
        let two_kld = |a: f64| 2.0 * kld_quadrature(a);
        let fd_factor = (two_kld(alpha + h) - two_kld(alpha - h)) / (2.0 * h);
        let fd_slope = (two_kld(alpha + h).sqrt() - two_kld(alpha - h).sqrt()) / (2.0 * h);
        let rf = (weibull_kld_derivative_factor(alpha) - fd_factor).abs() / fd_factor.abs();
        let rs = (weibull_kld_distance_slope(alpha) - fd_slope.abs()).abs() / fd_slope.abs();
        ok &= rf < 1e-5 && rs < 1e-5;
        lines.push(format!("alpha={alpha}: rel err factor {rf:.1e}, |d'| {rs:.1e}"));
    }
    Outcome::check(ok, lines.join("; "))
}

// ---------------------------------------------------------------------------
// 3. Laplace exactness on a Gaussian model.

fn criterion_3(_: &Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n_obs, n_lat) = (30, 8);
    let mut trip = Vec::new();
    for i in 0..n_obs {
        trip.push((i, 0, 1.0));
        trip.push((i, 1, rng.random_range(-1.0..1.0)));
        trip.push((i, 2 + i % 6, 1.0));
    }
    let m = CsrMatrix::from_triplets(n_obs, n_lat, &trip);
    let y: Vec<f64> = (0..n_obs).map(|_| rng.random_range(-1.0..2.0)).collect();
    let comps = vec![
        Component::new("beta", 2, ComponentKind::Fixed { precision: 0.5 }),
        Component::new("u", 6, ComponentKind::Iid { prior: PrecisionPrior::default() }).constrained(),
    ];
    let model = LatentGaussianModel::new(comps, Likelihood::Gaussian { prior: PrecisionPrior::default() }, y.clone(), m.clone()).unwrap();
    let free = [0.9, 0.3];
    let full = model.expand(&free);
    let (tau_e, tau_u) = (free[0].exp(), free[1].exp());

    // Constrained prior covariance and exact conditioning, dense.
    let mut s = DMatrix::<f64>::zeros(n_lat, n_lat);
    s[(0, 0)] = 2.0;
    s[(1, 1)] = 2.0;
    for i in 2..n_lat {
        s[(i, i)] = 1.0 / tau_u;
    }
    let mut a = DMatrix::<f64>::zeros(1, n_lat);
    (2..n_lat).for_each(|i| a[(0, i)] = 1.0);
    let sa = &s * a.transpose();
    let s = &s - &sa * sa.transpose() / (&a * &sa)[(0, 0)];
    let md = m.to_dense();
    let cy = &md * &s * md.transpose() + DMatrix::identity(n_obs, n_obs) / tau_e;
    let yv = DVector::from_vec(y);
    let exact = dense::gaussian_logpdf(&yv, &DVector::zeros(n_obs), &cy) + model.log_prior(&full);
    let k = &s * md.transpose() * dense::inverse(&cy);
    let mean = &k * &yv;
    let cov = &s - &k * &md * &s;

    let lp = log_posterior_hyper(&model, &free, None, &NewtonOptions::default()).unwrap();
    let ga = gaussian_approx(&model, &full, None, &NewtonOptions::default()).unwrap();
    let sel = ga.selected_inverse().unwrap();
    let var = ga.marginal_variances(&sel);
    let e_lp = (lp - exact).abs();
    let e_mean = (0..n_lat).map(|i| (ga.mode[i] - mean[i]).abs()).fold(0.0, f64::max);
    let e_sd = (0..n_lat).map(|i| (var[i].sqrt() - cov[(i, i)].sqrt()).abs()).fold(0.0, f64::max);
    Outcome::check(
        e_lp < 1e-10 && e_mean < 1e-8 && e_sd < 1e-8,
        format!("|log posterior error| = {e_lp:.1e} (< 1e-10), max mean error {e_mean:.1e}, max sd error {e_sd:.1e} (< 1e-8)"),
    )
}

// ---------------------------------------------------------------------------
// 4. Shape-only posterior against quadrature.

fn run_shape_only(dir: &Path) -> (windspde::inference::PosteriorResult, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w = Weibull::new(1.0, 1.5).unwrap();
    let y: Vec<f64> = (0..500).map(|_| w.sample(&mut rng)).collect();
    let model = LatentGaussianModel::new(vec![], Likelihood::Weibull { prior: PcPriorSpec::default() }, y.clone(), CsrMatrix::zeros(500, 0)).unwrap();
    let res = explore(&model, &ExploreOptions::default()).unwrap();
    std::fs::create_dir_all(dir).unwrap();
    res.write_json(&dir.join("posterior.json")).unwrap();
    write_marginals_csv(&res, &dir.join("hyper_marginals.csv")).unwrap();
    write_design_csv(&res, &dir.join("design.csv")).unwrap();
    (res, y)
}

fn criterion_4(work: &Path) -> Outcome {
    let t0 = Instant::now();
    let (res, y) = run_shape_only(&work.join("c4"));
    let secs = t0.elapsed().as_secs_f64();
    let spec = PcPriorSpec::default();
    let log_post = |t: f64| {
        let a = t.exp();
        y.iter().map(|&v| weibull_logpdf(v, a, 1.0).unwrap()).sum::<f64>() + pc_prior_logpdf(a, &spec) + t
    };
    let mg = &res.marginals[0];
    let peak = mg.internal.iter().map(|&t| log_post(t)).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = (mg.internal[0] - 1.0, mg.internal[mg.internal.len() - 1] + 1.0);
    let z = quad::integrate(|t| (log_post(t) - peak).exp(), lo, hi, 1e-13);
    // L1 over the whole line: engine density on its grid, zero outside.
    let inside: Vec<f64> = mg.internal.iter().zip(&mg.internal_density).map(|(&t, p)| (p - (log_post(t) - peak).exp() / z).abs()).collect();
    let tails = quad::integrate(|t| (log_post(t) - peak).exp() / z, lo, mg.internal[0], 1e-13)
        + quad::integrate(|t| (log_post(t) - peak).exp() / z, mg.internal[mg.internal.len() - 1], hi, 1e-13);
    let l1 = quad::trapezoid(&mg.internal, &inside) + tails;
    Outcome::check(l1 < 0.01 && secs < 30.0, format!("L1 = {l1:.2e} (< 0.01), {secs:.2} s (< 30)"))
}

// ---------------------------------------------------------------------------
// 5. Recovery of known hyperparameters.

fn context(dir: &Path, seed: u64, config: RunConfig) -> Context {
    let mut c = Context::new(config, dir);
    c.seed = seed;
    c
}

fn run_recovery(dir: &Path) -> windspde::Result<(windspde::inference::PosteriorResult, Truth)> {
    let sim = context(dir, 2025, RunConfig::default());
    let (_, truth) = cmd_simulate(&sim)?;
    let fit = context(dir, 2025, RunConfig::default());
    let res = cmd_fit(&fit, Some(&dir.join("prime.csv")), Some(&dir.join("mesh.json")))?;
    Ok((res, truth))
}

fn criterion_5(work: &Path) -> Outcome {
    let t0 = Instant::now();
    let (res, truth) = match run_recovery(&work.join("c5")) {
        Ok(r) => r,
        Err(e) => return Outcome::check(false, format!("pipeline failed: {e}")),
    };
    let secs = t0.elapsed().as_secs_f64();
    let h = truth.params.hyper();
    let mut ok = secs < 300.0;
    let mut parts = Vec::new();
    for name in &res.hyper_names {
        let e = res.hyper_moments(name).unwrap();
        let t = h.internal(name).unwrap();
        let z = (e.mean - t) / e.sd;
        ok &= z.abs() <= 3.0;
        parts.push(format!("{name} z={z:+.2}"));
    }
    Outcome::check(ok, format!("{}; {secs:.0} s (< 300)", parts.join(", ")))
}

// ---------------------------------------------------------------------------
// 6. Mesh selection.

const REFERENCE_VERTICES: [usize; 8] = [762, 981, 1358, 1420, 2194, 2561, 3136, 4009];

fn run_mesh_select(dir: &Path) -> windspde::Result<Vec<windspde_cli::MeshSelectRow>> {
    let mut cfg = RunConfig::default();
    cfg.simulate.n = 5000;
    let sim = context(dir, 2026, cfg.clone());
    cmd_simulate(&sim)?;
    let sel = context(dir, 2026, cfg);
    cmd_mesh_select(&sel, Some(&dir.join("prime.csv")))
}

fn criterion_6(work: &Path) -> Outcome {
    let rows = match run_mesh_select(&work.join("c6")) {
        Ok(r) => r,
        Err(e) => return Outcome::check(false, format!("mesh-select failed: {e}")),
    };
    let failed: Vec<&str> = rows.iter().filter(|r| r.summary.is_err()).map(|r| r.name.as_str()).collect();
    let verts: Vec<usize> = rows.iter().map(|r| r.summary.as_ref().map(|s| s.n_vertices).unwrap_or(0)).collect();
    let edges_nonincreasing = rows.windows(2).all(|w| w[1].spec.me1 <= w[0].spec.me1);
    let increasing = verts.windows(2).all(|w| w[1] > w[0]);
    let ratio: Vec<f64> = verts.iter().zip(REFERENCE_VERTICES).map(|(&v, p)| v as f64 / p as f64).collect();
    let within = ratio.iter().all(|r| (0.7..=1.3).contains(r));
    let stable = rows.iter().position(|r| r.stable);
    let ok = failed.is_empty() && rows.len() == 8 && edges_nonincreasing && increasing && within && stable.is_some();
    let detail = format!(
        "rows {}/8 ok; vertices {:?} vs reference {:?} (ratios {}) within +-30%: {}; strictly increasing: {}; stable at {}",
        8 - failed.len(),
        verts,
        REFERENCE_VERTICES,
        ratio.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join(" "),
        if within { "yes" } else { "NO" },
        if increasing { "yes" } else { "NO" },
        stable.map(|k| rows[k].name.clone()).unwrap_or_else(|| "none".into())
    );
    Outcome::check(ok, detail)
}

// ---------------------------------------------------------------------------
// 7. Field amplitude on the real measurements.

fn criterion_7(work: &Path) -> Outcome {
    let Some(prime) = std::env::var_os("WINDSPDE_PRIME").map(PathBuf::from) else {
        return Outcome { status: Status::Skip, detail: "WINDSPDE_PRIME not set; the measurement data is not bundled".into() };
    };
    let dir = work.join("c7");
    let mut cfg = RunConfig::default();
    cfg.data.sample_size = Some(5000);
    let ctx = context(&dir, 7, cfg);
    let run = || -> windspde::Result<_> {
        cmd_fit(&ctx, Some(&prime), None)?;
        cmd_project(&ctx, None, None)
    };
    let grid = match run() {
        Ok(g) => g,
        Err(e) => return Outcome::check(false, format!("fit/project failed: {e}")),
    };
    let means: Vec<f64> = grid.unmasked_means().collect();
    let lo = means.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sites: Vec<Point> = StationTable::wasa().stations.values().map(|s| [s.longitude, s.latitude]).collect();
    let (near, far) = grid.sd_contrast(&sites, 0.5, 3.0);
    let contrast = matches!((near, far), (Some(a), Some(b)) if a < b);
    Outcome::check(
        lo >= -0.5 && hi <= 0.5 && contrast,
        format!("means in [{lo:.3}, {hi:.3}] (within [-0.5, 0.5]); sd near {near:?} < far {far:?}: {contrast}"),
    )
}

// ---------------------------------------------------------------------------
// 8. Bit-identical reruns of criteria 4 to 6.

/// Files carrying timings are excluded.
fn deterministic_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map(|it| it.filter_map(|e| e.ok().map(|e| e.path())).collect())
        .unwrap_or_default();
    v.retain(|p| {
        let n = p.file_name().unwrap().to_string_lossy();
        !(n.ends_with("_metadata.txt") || n == "mesh_select_timing.csv" || n == "mesh_select.txt")
    });
    v.sort();
    v
}

fn criterion_8(work: &Path) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (label, sub, rerun) in [
        ("4", "c4", (|d: &Path| {
            run_shape_only(d);
            true
        }) as fn(&Path) -> bool),
        ("5", "c5", |d: &Path| run_recovery(d).is_ok()),
        ("6", "c6", |d: &Path| run_mesh_select(d).map(|rows| rows.iter().all(|r| r.summary.is_ok())).unwrap_or(false)),
    ] {
        let first = work.join(sub);
        let mut ran = true;
        if !first.exists() {
            let d = work.join(format!("{sub}_first"));
            ran &= rerun(&d);
            std::fs::rename(&d, &first).unwrap();
        }
        let second = work.join(format!("{sub}_again"));
        ran &= rerun(&second);
        if !ran {
            ok = false;
            parts.push(format!("criterion {label}: run failed"));
            continue;
        }
        let a = deterministic_files(&first);
        let b = deterministic_files(&second);
        let names = |v: &[PathBuf]| v.iter().map(|p| p.file_name().unwrap().to_owned()).collect::<Vec<_>>();
        let same = !a.is_empty() && names(&a) == names(&b) && a.iter().zip(&b).all(|(x, y)| std::fs::read(x).unwrap() == std::fs::read(y).unwrap());
        ok &= same;
        parts.push(format!("criterion {label}: {} files {}", a.len(), if same { "identical" } else { "DIFFER" }));
    }
    Outcome::check(ok, parts.join("; "))
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, Criterion); 8] =
        [(1, criterion_1), (2, criterion_2), (3, criterion_3), (4, criterion_4), (5, criterion_5), (6, criterion_6), (7, criterion_7), (8, criterion_8)];
    let work = tempfile::tempdir().expect("temporary directory");
    let mut failures = 0;
    for (k, f) in criteria {
        if !selected.is_empty() && !selected.contains(&k) {
            continue;
        }
        let t0 = Instant::now();
        let out = f(work.path());
        let tag = match out.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failures += 1;
                "FAIL"
            }
            Status::Skip => "SKIP",
        };
        println!("criterion {k}: {tag} [{:.1} s] {}", t0.elapsed().as_secs_f64(), out.detail);
    }
    if failures > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
