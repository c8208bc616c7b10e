//! Bayesian nonparametric density regression for discrete outcomes.
//!
//! Discrete responses and binary covariates are represented as thresholded
//! latent Gaussian variables; a Dirichlet process mixture of restricted
//! multivariate Gaussians models the joint density of latent and observed
//! continuous coordinates. Posterior sampling runs a blocked Gibbs sampler
//! (truncated or slice-based) with adaptive Metropolis-Hastings moves, and
//! conditional pmfs, means and quantiles are evaluated on covariate grids
//! from the posterior draws.

pub mod config;
pub mod cutpoints;
pub mod data;
pub mod distributions;
pub mod error;
pub mod inference;
pub mod kernel;
pub mod priors;
pub mod sampler;
pub mod simgen;
pub mod store;

pub use error::{Error, Result};
