//! Bias polarity probing, accuracy reports and cross-run comparison.

mod compare;
mod probe;
mod report;

use thiserror::Error;

pub use compare::{compare_runs, Cell, ComparisonTable, Marker};
pub use probe::{infer_polarity, probe_polarity, probe_samples, PolarityReport, POLARITY_MARGIN_PP};
pub use report::{evaluate, CountBreakdown, EvalReport, LabelBreakdown, Prediction, RunMeta};

use crate::label::DistError;
use crate::source::ModelError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no eligible samples")]
    Empty,
    #[error("sample `{0}` has no gold label")]
    MissingGold(String),
    #[error("no prediction for sample `{0}`")]
    MissingPrediction(String),
    #[error("prediction for unknown sample `{0}`")]
    UnexpectedPrediction(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Detect(#[from] crate::detect::DetectError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
