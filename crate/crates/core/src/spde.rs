//! Finite-element SPDE operators and Matérn/GMRF utilities (`ν = 1`).

use std::f64::consts::PI;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::sparse::{CsrMatrix, SymbolicCholesky};
pub use crate::special::{matern_correlation, nominal_range};
use crate::special::gamma;

/// Lumped mass, stiffness and `G C⁻¹ G`, each stored on one shared pattern so
/// that `Q(κ, τ)` is a cheap linear combination of value arrays.
#[derive(Debug, Clone)]
pub struct SpdeOperators {
    /// Diagonal of the lumped mass matrix.
    pub c: Vec<f64>,
    pub g: CsrMatrix,
    /// Union pattern of `C`, `G` and `G C⁻¹ G`.
    pattern: CsrMatrix,
    c_vals: Vec<f64>,
    g_vals: Vec<f64>,
    gcg_vals: Vec<f64>,
}

impl SpdeOperators {
    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn c_inv_diag(&self) -> Vec<f64> {
        self.c.iter().map(|c| 1.0 / c).collect()
    }

    pub fn mass(&self) -> CsrMatrix {
        CsrMatrix::from_diagonal(&self.c)
    }

    pub fn gcg(&self) -> CsrMatrix {
        self.with_values(self.gcg_vals.clone())
    }

    /// The shared sparsity pattern of every precision produced here.
    pub fn pattern(&self) -> &CsrMatrix {
        &self.pattern
    }

    fn with_values(&self, v: Vec<f64>) -> CsrMatrix {
        let mut m = self.pattern.clone();
        m.values_mut().copy_from_slice(&v);
        m
    }

    /// Values of `Q(κ, τ)` on [`pattern`](Self::pattern).
    pub fn precision_values(&self, kappa: f64, tau: f64, out: &mut [f64]) {
        let k2 = kappa * kappa;
        let t2 = tau * tau;
        for (i, o) in out.iter_mut().enumerate() {
            *o = t2 * (k2 * k2 * self.c_vals[i] + 2.0 * k2 * self.g_vals[i] + self.gcg_vals[i]);
        }
    }

    /// `∂Q/∂log κ` and `∂Q/∂log τ` are not needed; only values are exposed.
    pub fn precision(&self, kappa: f64, tau: f64) -> CsrMatrix {
        let mut v = vec![0.0; self.pattern.nnz()];
        self.precision_values(kappa, tau, &mut v);
        self.with_values(v)
    }
}

/// Piecewise-linear FEM assembly with a lumped mass matrix.
pub fn assemble_fem(mesh: &Mesh) -> Result<SpdeOperators> {
    let n = mesh.n_vertices();
    let mut c = vec![0.0; n];
    let mut g_trip = Vec::with_capacity(9 * mesh.n_triangles());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let p = tri.map(|i| mesh.vertices[i]);
        let area = mesh.triangle_area(t);
        if !(area > 0.0) || !area.is_finite() {
            return Err(Error::Mesh(format!("triangle {t} {tri:?} is degenerate (area {area})")));
        }
        // Edge opposite vertex k.
        let e: [[f64; 2]; 3] = std::array::from_fn(|k| {
            let a = p[(k + 1) % 3];
            let b = p[(k + 2) % 3];
            [b[0] - a[0], b[1] - a[1]]
        });
        for i in 0..3 {
            c[tri[i]] += area / 3.0;
            for j in 0..3 {
                let v = (e[i][0] * e[j][0] + e[i][1] * e[j][1]) / (4.0 * area);
                g_trip.push((tri[i], tri[j], v));
            }
        }
    }
    let g = CsrMatrix::from_triplets(n, n, &g_trip);
    let c_inv: Vec<f64> = c.iter().map(|x| 1.0 / x).collect();
    let gcg = g.matmul(&CsrMatrix::from_diagonal(&c_inv)).matmul(&g);
    let mut union = Vec::with_capacity(gcg.nnz() + g.nnz() + n);
    union.extend((0..n).map(|i| (i, i, 0.0)));
    union.extend(g.triplets().into_iter().map(|(i, j, _)| (i, j, 0.0)));
    union.extend(gcg.triplets().into_iter().map(|(i, j, _)| (i, j, 0.0)));
    let pattern = CsrMatrix::from_triplets(n, n, &union);
    let c_vals = align(&pattern, &CsrMatrix::from_diagonal(&c));
    let g_vals = align(&pattern, &g);
    let gcg_vals = align(&pattern, &gcg);
    Ok(SpdeOperators { c, g, pattern, c_vals, g_vals, gcg_vals })
}

fn align(pattern: &CsrMatrix, m: &CsrMatrix) -> Vec<f64> {
    let mut out = vec![0.0; pattern.nnz()];
    for i in 0..m.nrows() {
        let (pc, _) = pattern.row(i);
        let base = pattern.indptr()[i];
        let (mc, mv) = m.row(i);
        for (&j, &v) in mc.iter().zip(mv) {
            let k = pc.binary_search(&j).expect("pattern must contain every operator entry");
            out[base + k] = v;
        }
    }
    out
}

/// Matérn field parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaternParams {
    pub kappa: f64,
    pub nu: f64,
    pub tau: f64,
    pub sigma2_x: f64,
}

impl MaternParams {
    pub fn from_kappa_tau(kappa: f64, tau: f64, nu: f64) -> Self {
        Self { kappa, nu, tau, sigma2_x: marginal_variance(kappa, tau, nu) }
    }

    /// Parameters giving the requested nominal range and marginal sd.
    pub fn from_range_sd(range: f64, sd: f64, nu: f64) -> Self {
        let kappa = (8.0 * nu).sqrt() / range;
        let tau = (gamma(nu) / (gamma(nu + 1.0) * 4.0 * PI * kappa.powf(2.0 * nu))).sqrt() / sd;
        Self::from_kappa_tau(kappa, tau, nu)
    }

    pub fn range(&self) -> f64 {
        nominal_range(self.kappa, self.nu)
    }
}

/// `σ²ₓ = Γ(ν) / (Γ(ν+1) 4π κ^{2ν} τ²)`.
pub fn marginal_variance(kappa: f64, tau: f64, nu: f64) -> f64 {
    gamma(nu) / (gamma(nu + 1.0) * 4.0 * PI * kappa.powf(2.0 * nu) * tau * tau)
}

/// Precision `Q = τ²(κ⁴C + 2κ²G + G C⁻¹ G)`.
pub fn precision(ops: &SpdeOperators, kappa: f64, tau: f64) -> Result<CsrMatrix> {
    if !(kappa > 0.0 && tau > 0.0 && kappa.is_finite() && tau.is_finite()) {
        return Err(Error::Numerical(format!("SPDE precision needs positive kappa and tau (got {kappa}, {tau})")));
    }
    Ok(ops.precision(kappa, tau))
}

/// One zero-mean draw from the GMRF with precision `q`.
pub fn sample_field(q: &CsrMatrix, seed: u64) -> Result<Vec<f64>> {
    let sym = SymbolicCholesky::analyze_csr(q);
    sample_field_with(&sym, q, seed)
}

pub fn sample_field_with(sym: &Arc<SymbolicCholesky>, q: &CsrMatrix, seed: u64) -> Result<Vec<f64>> {
    let f = sym.factor_csr(q).map_err(|e| match e {
        Error::NotPositiveDefinite { column } => Error::Numerical(format!(
            "SPDE precision is not positive definite (column {column}); try a larger kappa or check the mesh"
        )),
        other => other,
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(f.sample(&mut rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, Mesh, MeshSpec, Zone};

    fn single_triangle() -> Mesh {
        Mesh {
            vertices: vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            triangles: vec![[0, 1, 2]],
            boundary: vec![Zone::Inner; 3],
            triangle_zone: vec![Zone::Inner],
            inner_boundary: vec![],
            outer_boundary: vec![],
        }
    }

    fn two_triangles() -> Mesh {
        Mesh {
            vertices: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
            boundary: vec![Zone::Inner; 4],
            triangle_zone: vec![Zone::Inner; 2],
            inner_boundary: vec![],
            outer_boundary: vec![],
        }
    }

    fn small_mesh(me: f64) -> Mesh {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        build_mesh(&pts, &MeshSpec::new(me, 2.0 * me, 0.1, 0.2, 0.0)).unwrap()
    }

    #[test]
    fn single_triangle_mass_and_stiffness() {
        let ops = assemble_fem(&single_triangle()).unwrap();
        for &c in &ops.c {
            assert!((c - 1.0 / 6.0).abs() < 1e-15);
        }
        // Hand assembly: [[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]].
        let expect = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((ops.g.get(i, j) - expect[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_triangle_square_stiffness() {
        let ops = assemble_fem(&two_triangles()).unwrap();
        // Diagonal-split unit square: the shared diagonal carries no coupling.
        let expect = [[1.0, -0.5, 0.0, -0.5], [-0.5, 1.0, -0.5, 0.0], [0.0, -0.5, 1.0, -0.5], [-0.5, 0.0, -0.5, 1.0]];
        for i in 0..4 {
            for j in 0..4 {
                assert!((ops.g.get(i, j) - expect[i][j]).abs() < 1e-15, "{i} {j}");
            }
        }
    }

    #[test]
    fn stiffness_rows_sum_to_zero_and_psd() {
        let mesh = small_mesh(0.2);
        let ops = assemble_fem(&mesh).unwrap();
        assert!(ops.g.row_sums().iter().all(|s| s.abs() < 1e-10));
        assert!(ops.g.max_asymmetry() < 1e-14);
        let eig = ops.g.to_dense().symmetric_eigenvalues();
        assert!(eig.iter().all(|&e| e > -1e-10));
        assert!(ops.c.iter().all(|&c| c > 0.0));
        let area: f64 = ops.c.iter().sum();
        assert!((area - mesh.total_area()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_triangle_is_rejected() {
        let mut m = single_triangle();
        m.vertices[2] = [2.0, 0.0];
        assert!(matches!(assemble_fem(&m), Err(Error::Mesh(_))));
    }

    #[test]
    fn precision_scaling_and_limits() {
        let ops = assemble_fem(&small_mesh(0.25)).unwrap();
        let q1 = precision(&ops, 2.0, 1.0).unwrap();
        let q3 = precision(&ops, 2.0, 3.0).unwrap();
        for (a, b) in q1.values().iter().zip(q3.values()) {
            assert_eq!(9.0 * a, *b);
        }
        assert!(q1.max_asymmetry() <= 1e-12 * q1.frobenius_norm());
        let rel = |kappa: f64| {
            let q = precision(&ops, kappa, 1.0).unwrap().scale(1.0 / kappa.powi(4));
            q.linear_combination(1.0, &ops.mass(), -1.0).frobenius_norm() / ops.mass().frobenius_norm()
        };
        assert!(rel(1e3) > rel(1e4) && rel(1e4) > rel(1e5));
        assert!(rel(1e6) < 1e-8);
        assert!(precision(&ops, -1.0, 1.0).is_err());
    }

    #[test]
    fn variance_identity() {
        let p = MaternParams::from_range_sd(2.0, 0.3, 1.0);
        assert!((p.kappa - 2f64.sqrt()).abs() < 1e-15);
        assert!((p.sigma2_x - 0.09).abs() < 1e-14);
        assert!((p.range() - 2.0).abs() < 1e-14);
        assert!((marginal_variance(1.0, 1.0, 1.0) - 1.0 / (4.0 * PI)).abs() < 1e-16);
    }

    #[test]
    fn interior_variance_approaches_stationary_value() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let mesh = build_mesh(&pts, &MeshSpec::new(0.04, 0.08, 0.3, 0.3, 0.0)).unwrap();
        let ops = assemble_fem(&mesh).unwrap();
        let kappa = 10.0;
        let tau = 1.0;
        let q = precision(&ops, kappa, tau).unwrap();
        let f = SymbolicCholesky::analyze_csr(&q).factor_csr(&q).unwrap();
        let sinv = f.selected_inverse();
        let target = marginal_variance(kappa, tau, 1.0);
        let mut vals = Vec::new();
        for (i, v) in mesh.vertices.iter().enumerate() {
            if (v[0] - 0.5).abs() < 0.2 && (v[1] - 0.5).abs() < 0.2 {
                vals.push(sinv.get(i, i).unwrap());
            }
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!(((mean - target) / target).abs() < 0.1, "{mean} vs {target}");
    }

    #[test]
    fn sampling_matches_inverse() {
        let grid: Vec<[f64; 2]> =
            (0..50).map(|k| [(k % 7) as f64 / 6.0 + 0.01 * ((k * 7) % 5) as f64, (k / 7) as f64 / 6.0 + 0.013 * ((k * 3) % 4) as f64]).collect();
        let mesh = Mesh::from_points(&grid).unwrap();
        let ops = assemble_fem(&mesh).unwrap();
        assert_eq!(ops.n(), 50);
        let q = precision(&ops, 3.0, 1.0).unwrap();
        let cov = q.to_dense().try_inverse().unwrap();
        let n = ops.n();
        let draws = 10_000;
        let sym = SymbolicCholesky::analyze_csr(&q);
        let mut sum = vec![0.0; n];
        let mut outer = vec![0.0; n * n];
        for s in 0..draws {
            let x = sample_field_with(&sym, &q, s as u64).unwrap();
            for i in 0..n {
                sum[i] += x[i];
                for j in 0..n {
                    outer[i * n + j] += x[i] * x[j];
                }
            }
        }
        let nd = draws as f64;
        for i in 0..n {
            let se = (cov[(i, i)] / nd).sqrt();
            assert!((sum[i] / nd).abs() < 4.0 * se);
            for j in 0..n {
                let sij = cov[(i, j)];
                let se = ((cov[(i, i)] * cov[(j, j)] + sij * sij) / nd).sqrt();
                assert!((outer[i * n + j] / nd - sij).abs() < 4.5 * se, "{i} {j}");
            }
        }
        assert_eq!(sample_field(&q, 9).unwrap(), sample_field(&q, 9).unwrap());
    }
}
