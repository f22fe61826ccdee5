//! Nested Laplace approximations for latent Gaussian models.

pub mod explore;
pub mod laplace;
pub mod model;
pub mod spline;

pub use explore::{explore, fit_report, ExploreOptions, FitSummary, PosteriorResult, Strategy};
pub use laplace::{gaussian_approx, log_joint, log_posterior_hyper, GaussianApprox, NewtonOptions};
pub use model::{Component, ComponentKind, HyperInfo, HyperKind, LatentGaussianModel, Likelihood};
