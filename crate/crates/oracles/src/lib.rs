//! Reference computations for tests.
//!
//! Everything here is deliberately naive: adaptive quadrature, a Nelder-Mead
//! simplex search, dense linear algebra and brute-force Delaunay. None of it
//! shares code with the production crates.

pub mod dense;
pub mod delaunay;
pub mod optimize;
pub mod quad;
