//! Survey vote-choice imputation benchmark.
//!
//! Loads codebook-driven survey data, builds the E1–E4 × {a,b} experiment
//! grid, runs language-model and tabular imputers over stratified folds and
//! scores them with macro F1, aggregated vote share and total variation
//! distance.

pub mod backend;
pub mod baselines;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod gles;
pub mod imputer;
pub mod prompt;
pub mod record;
pub mod reference;
pub mod run;
pub mod survey;
pub mod synthetic;
pub mod vote;

pub use error::{Error, Result};
pub use record::PredictionRecord;
pub use survey::{Codebook, Dataset, Respondent};
pub use vote::VoteChoice;
