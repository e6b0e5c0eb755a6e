//! Propensity-score matching estimators of the marginal causal hazard ratio.

pub mod cli;
pub mod coxph;
pub mod dataset;
pub mod error;
pub mod inference;
pub mod matching;
pub mod propensity;
pub mod rng;
pub mod simulation;

pub use dataset::{CsvSchema, Dataset, Subject};
pub use error::{Error, Result};
pub use propensity::{PropensityFit, PsFormula};
