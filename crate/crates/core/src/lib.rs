//! Mixture cure additive hazards models for partly interval-censored
//! survival data, fitted by constrained maximum penalized likelihood.
//!
//! The crate is organised around the fitting pipeline:
//!
//! * [`data`] — subjects, censoring classification, parameter layout;
//! * [`baseline`] — piecewise-constant baseline hazard basis and the
//!   second-difference roughness penalty;
//! * [`model`] — log-likelihood, gradient and Hessian of the mixture cure
//!   additive hazards model;
//! * [`constraints`] — the linear inequality system keeping hazards
//!   nonnegative;
//! * [`solver`] — primal–dual interior-point maximiser of the penalized
//!   likelihood;
//! * [`smoothing`] — marginal-likelihood selection of the smoothing
//!   parameter;
//! * [`inference`] — active-constraint-corrected asymptotic covariance,
//!   standard errors and survival bands;
//! * [`fit`] — the end-to-end fitting entry point;
//! * [`simgen`] — synthetic data generation for calibration studies;
//! * [`replicate`] — Monte Carlo replication harness;
//! * [`io`] — CSV/TOML/JSON readers and writers for all artifacts.

pub mod baseline;
pub mod constraints;
pub mod data;
pub mod error;
pub mod fit;
pub mod inference;
pub mod io;
pub mod model;
pub mod replicate;
pub mod simgen;
pub mod smoothing;
pub mod solver;

pub use error::{Error, Result};
