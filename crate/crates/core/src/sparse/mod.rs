//! Sparse matrices and the sparse Cholesky machinery used by every GMRF
//! computation: factorisation with a reusable symbolic analysis, solves,
//! sampling, log-determinants and selected inversion.

mod cholesky;
mod csr;
mod ordering;

pub use cholesky::{CholeskyFactor, SelectedInverse, SymbolicCholesky};
pub use csr::CsrMatrix;
pub use ordering::minimum_degree;
