//! Bayesian functional generalized additive models for sparsely observed,
//! noisy functional covariates.

pub mod basis;
pub mod data;
pub mod error;
pub mod fpca;
pub mod mcmc;
pub mod model;
pub mod reparam;
pub mod rng;
pub mod sim;
pub mod smooth;
pub mod vb;

pub use error::{FgamError, Result};
