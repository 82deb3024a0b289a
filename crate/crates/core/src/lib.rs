//! Differentially private online Bayesian estimation of a location-scale
//! population from truncated, Laplace-noised records, with truncation
//! intervals chosen adaptively by Thompson sampling over a Monte Carlo
//! Fisher-information objective.

pub mod adapt;
pub mod baselines;
pub mod error;
pub mod fisher;
pub mod harness;
pub mod model;
pub mod numeric;
pub mod privacy;
pub mod rng;
pub mod smc;

pub use error::{Error, Result};
