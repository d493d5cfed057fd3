//! Causal-effect calibration over multiple bias types.
//!
//! Stage one estimates each feature's indirect effect from label-balanced
//! samples carrying only that known feature. Stage two fits one combination
//! weight per known bias type from samples carrying several known features.
//! Debiasing subtracts the combined effect from a raw prediction.

mod debias;
mod estimate;
mod select;

use thiserror::Error;

pub use debias::{
    calibrate, combined_nie, debias, report_probabilities, CalibrationProfile, CoverageStats, Debiased,
    Provenance,
};
pub use estimate::{
    estimate_feature_nie, estimate_lambdas, fit_lambdas, group_moments, nie_from_mean, FeatureNie,
    GroupMoment, LambdaFit, SolveDiagnostics, SolverOptions,
};
pub use select::{select_calibration_samples, CalibSampleSet, SelectionConfig, Shortfall};

use crate::bias::BiasFeature;
use crate::detect::DetectError;
use crate::label::DistError;
use crate::source::ModelError;

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("{what} = {value} must be a positive multiple of 3")]
    NotDivisible { what: &'static str, value: usize },
    #[error("no known bias types given")]
    NoKnownTypes,
    #[error("not enough eligible samples: {}", fmt_shortfalls(.0))]
    Shortfall(Vec<Shortfall>),
    #[error("no stage-1 samples for feature {0}")]
    EmptyStage1(BiasFeature),
    #[error("sample `{id}` carries {feature}, which has no estimated effect")]
    Uncovered { id: String, feature: BiasFeature },
    #[error("feature {0} has no estimated effect in the profile")]
    UnknownFeature(BiasFeature),
    #[error("sample `{0}` has no gold label")]
    MissingGold(String),
    #[error("{predictions} predictions for {samples} samples")]
    LengthMismatch { samples: usize, predictions: usize },
    #[error("invalid calibration profile: {0}")]
    InvalidProfile(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

fn fmt_shortfalls(list: &[Shortfall]) -> String {
    list.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("; ")
}
