//! Estimating the expected acquisition and misclassification cost of an
//! active feature acquisition policy from retrospective data with
//! missingness.
//!
//! The crate covers offline-RL, missing-data and semi-offline estimators,
//! the synthetic processes used to compare them, and positivity diagnostics.

pub mod classify;
pub mod cost;
pub mod data;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod mask;
pub mod nuisance;
pub mod panel;
pub mod pipeline;
pub mod policy;
pub mod positivity;
pub mod rng;
pub mod simulate;
pub mod toy;

pub use error::{AfapeError, Result};
