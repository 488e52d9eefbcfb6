//! Principal-stratification effects of a count-valued intermediate treatment,
//! estimated with Bayesian additive regression trees.

pub mod bart;
pub mod count_model;
pub mod diagnostics;
pub mod error;
pub mod estimands;
pub mod normal;
pub mod simulation;
pub mod strata;
pub mod surrogate;
pub mod tsls;

pub use error::{Error, Result};
