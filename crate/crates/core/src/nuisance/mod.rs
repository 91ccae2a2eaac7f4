//! Nuisance models: the retrospective propensity and the semi-offline value
//! functions.

pub mod logistic;
pub mod mlp;
pub mod propensity;
pub mod qsemi;

pub use mlp::{Optimizer, Regressor, TrainConfig};
pub use propensity::{BitModel, FitRows, PropensityModel, PropensitySpec};
pub use qsemi::{fit_q_semi, QEncoder, QSemiModel};
