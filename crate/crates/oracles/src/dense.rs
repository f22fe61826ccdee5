//! Dense Gaussian helpers.

use nalgebra::{DMatrix, DVector};

pub fn from_triplets(n: usize, entries: &[(usize, usize, f64)]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for &(i, j, v) in entries {
        m[(i, j)] += v;
    }
    m
}

pub fn inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().try_inverse().expect("singular matrix")
}

pub fn log_det_spd(m: &DMatrix<f64>) -> f64 {
    let chol = nalgebra::Cholesky::new(m.clone()).expect("matrix not SPD");
    2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// log N(y; mean, cov).
pub fn gaussian_logpdf(y: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let n = y.len() as f64;
    let r = y - mean;
    let chol = nalgebra::Cholesky::new(cov.clone()).expect("covariance not SPD");
    let sol = chol.solve(&r);
    -0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det_spd(cov) - 0.5 * r.dot(&sol)
}
