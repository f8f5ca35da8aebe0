//! Bayesian function-on-scalars regression.
//!
//! Curves `Y_i(tau)` on a common grid are modelled as `F beta_i + noise`
//! with an orthonormal, spline-smoothed loading matrix `F` and factor scores
//! `beta_i = mu + A x_i + gamma_i`. The crate provides the Gibbs sampler,
//! posterior summaries, decoupled variable selection and the simulation
//! harness used to evaluate them.

pub mod archive;
pub mod basis;
pub mod data;
pub mod dss;
pub mod error;
pub mod gibbs;
pub mod linalg;
pub mod priors;
pub mod samplers;
pub mod sim;
pub mod stats;
pub mod summaries;

pub use error::{Error, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
