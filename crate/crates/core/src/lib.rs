//! Conformal prediction under covariate shift.
//!
//! Split and full conformal, jackknife+, CV+ and their likelihood-ratio
//! weighted forms on a ridge-regression base learner; closed-form
//! training-conditional coverage bounds; and a seeded Monte Carlo harness
//! that measures the miscoverage those bounds control.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod cli;
pub mod conformal;
pub mod data;
pub mod error;
pub mod experiment;
pub mod ratio;
pub mod ridge;
pub mod rng;
pub mod serde_ext;
pub mod weighted;

pub use error::{Error, Result};
