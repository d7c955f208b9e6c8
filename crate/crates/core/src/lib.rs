//! Two-phase regression estimators under model misspecification.
//!
//! Design-based (inverse probability weighted, raking) and model-based
//! (maximum likelihood, regression calibration, multiple imputation)
//! estimators of a working regression model, the multiple-imputation raking
//! hybrid, misspecification diagnostics and a Monte Carlo harness.

pub mod calibration;
pub mod designs;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod glm;
pub mod harness;
pub mod imputation;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod spml;

pub use error::{Error, Result};
