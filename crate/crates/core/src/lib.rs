//! Multi-bias NLI benchmark generation and causal-effect debiasing.

pub mod benchgen;
pub mod bias;
pub mod calib;
pub mod detect;
pub mod eval;
pub mod label;
pub mod oracle;
pub mod sample;
pub mod source;

pub use bias::{BiasFeature, BiasType};
pub use label::{argmax_label, dist_mean, uniform_dist, Label, ProbDist, ScoreVector};
pub use sample::NliSample;
pub use source::{ModelError, ProbSource, PromptMode};
