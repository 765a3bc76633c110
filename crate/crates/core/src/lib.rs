//! Likelihood-free parameter recovery for a covariate-driven two-patch
//! vector–host stochastic Petri net.
//!
//! The crate is organised bottom-up:
//!
//! - [`petri`]: places, transitions, hazard laws and the Gillespie direct method
//! - [`covariates`]: weather ingestion, smoothing and the basis functions
//! - [`model`]: the two-patch net and the coefficient → daily-rate mapping
//! - [`dataset`]: simulation campaigns, observation dropout and persistence
//! - [`nn`]: a small tensor engine, the 1D residual network, Adam and training
//! - [`uq`]: Monte Carlo dropout posteriors, metrics and calibration
//! - [`pipeline`]: the config-driven commands behind the `spn` binary

pub mod covariates;
pub mod dataset;
pub mod error;
pub mod model;
pub mod nn;
pub mod petri;
pub mod pipeline;
pub mod report;
pub mod seed;
pub mod uq;

pub use error::{Error, Result};
