//! Benchmark construction: templates, vocabulary-driven slot filling and
//! post-hoc verification of the five co-polar bias features.

mod generate;
mod template;
mod verify;
mod vocab;

use thiserror::Error;

pub use generate::{
    generate, read_records, target_features, write_records, Dataset, DatasetRecord, GenConfig, GenStats,
    SlotProvenance,
};
pub use template::{template_by_id, templates_of, Slots, Template, TemplateForm, TEMPLATES};
pub use verify::{verify_dataset, SampleFailure, VerifyReport};
pub use vocab::{load_vocab, VerbPhrasePair, Vocab, VocabError, MIN_PHRASE_GAP, PAIRS_FILE, PAIRS_PER_LABEL};

use crate::detect::DetectError;
use crate::label::Label;
use crate::sample::SampleError;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("template {template} needs slot {slot}")]
    MissingSlot { template: &'static str, slot: &'static str },
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("vocabulary has no candidates for a {0} sample")]
    EmptyVocab(Label),
    #[error(
        "rejection budget exhausted at sample {index} ({label}) after {attempts} attempts; \
         acceptance rate so far {acceptance_rate:.4}"
    )]
    RejectionBudget {
        index: usize,
        label: Label,
        attempts: usize,
        acceptance_rate: f64,
    },
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Sample(#[from] SampleError),
}
