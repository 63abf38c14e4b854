//! Classical and oracle Hodges' estimators with the machinery to study them.
//!
//! The crate is organised around the life cycle of a risk study:
//!
//! - [`partition`]: active/inactive index sets, precision-matrix blocks and the
//!   parameter-space regions around a center point.
//! - [`schedule`]: threshold and rate sequences as functions of the sample size.
//! - [`estimators`]: classical, oracle and smoothed Hodges' estimators.
//! - [`models`]: data-generating processes and their base estimators.
//! - [`baselines`]: hard/soft/SCAD thresholding and penalized least squares.
//! - [`risk`]: Monte Carlo risk curves, selection probabilities and the
//!   closed-form Gaussian risk of the classical estimator.
//! - [`bounds`]: sample-path verification of the finite-sample error lower bounds.
//!
//! Coordinates are 0-based throughout the API.

pub mod baselines;
pub mod bounds;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod models;
pub mod normal;
pub mod partition;
pub mod risk;
pub mod rng;
pub mod schedule;

pub use error::{Error, Result};
