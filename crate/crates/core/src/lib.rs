pub mod error;
pub mod special;

pub use error::{Error, Result};
pub mod sparse;
pub mod priors;
pub mod mesh;
pub mod spde;
pub mod ingest;
pub mod latent;
pub mod inference;
pub mod timing;
pub mod simulate;
pub mod project;
pub mod config;
