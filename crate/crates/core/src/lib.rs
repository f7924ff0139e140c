//! Gaussian-process regression with Bayesian and hybrid Cramér-Rao bounds
//! on prediction error after the hyperparameters have been learned.
//!
//! The main entry points are [`gp::GpModel`] for the model itself,
//! [`bounds::bound_report`] for the bounds and [`learning::fit_ml`] for
//! maximum-likelihood learning.

pub mod bounds;
pub mod cli;
pub mod datasets;
pub mod experiments;
pub mod error;
pub mod gp;
pub mod kernel;
pub mod learning;
pub mod linalg;
pub mod mean;
pub mod output;
pub mod points;

pub use error::{Error, ErrorCategory, Result};
