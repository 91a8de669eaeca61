//! Error-in-operator linear regression: the alternating-minimization
//! estimator, plug-in and ridge baselines, closed-form leading terms and
//! bounds, synthetic designs, and a reproducible Monte-Carlo harness.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod datagen;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod model;
pub mod theory;

pub use error::{EioError, Result};
pub use model::{DesignSpec, Hyperparams, Mu, SufficientStats, ValidatedSpec};
