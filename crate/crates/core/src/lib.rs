//! Multivariate post-processing of ensemble weather forecasts.
//!
//! The crate covers the whole chain from raw ensembles to verified,
//! spatially coherent calibrated samples:
//!
//! - [`domain`]: stations, forecasts, observations, station graphs and
//!   basic ensemble statistics.
//! - [`scores`]: proper scoring rules (CRPS, energy score, variogram
//!   score), prediction intervals, multivariate rank histograms,
//!   Diebold–Mariano tests and Benjamini–Hochberg control.
//! - [`marginal`]: censored-normal EMOS with semi-local clustering and
//!   proportional-odds logistic regression for categorical targets.
//! - [`copula`]: ensemble copula coupling, the Schaake shuffle and
//!   reordering by a network's rank structure.
//! - [`nnet`]: a small reverse-mode differentiation engine with GraphSAGE
//!   and dense layers, score-based losses and an early-stopping trainer.
//! - [`pipeline`]: CSV ingestion, features, the synthetic generator and
//!   rolling-window experiments.

pub mod copula;
pub mod domain;
pub mod error;
pub mod marginal;
pub mod nnet;
pub mod pipeline;
pub mod scores;
pub mod special;

pub use error::{Error, Result};
