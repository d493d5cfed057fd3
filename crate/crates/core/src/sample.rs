use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bias::{feature_set_serde, BiasFeature, BiasType};
use crate::label::Label;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SampleError {
    #[error("sample `{0}` has an empty premise")]
    EmptyPremise(String),
    #[error("sample `{0}` has an empty hypothesis")]
    EmptyHypothesis(String),
    #[error("sample `{id}` carries more than one feature of type {bias_type}")]
    DuplicateType { id: String, bias_type: BiasType },
}

/// One premise/hypothesis pair.
///
/// `features` is `None` until detection has run (or the pool was
/// annotated up front).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NliSample {
    pub id: String,
    pub premise: String,
    pub hypothesis: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Label>,
    #[serde(
        default,
        with = "feature_set_serde::option",
        skip_serializing_if = "Option::is_none"
    )]
    pub features: Option<BTreeSet<BiasFeature>>,
}

impl NliSample {
    pub fn new(
        id: impl Into<String>,
        premise: impl Into<String>,
        hypothesis: impl Into<String>,
    ) -> Result<Self, SampleError> {
        let sample = NliSample {
            id: id.into(),
            premise: premise.into(),
            hypothesis: hypothesis.into(),
            gold: None,
            features: None,
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn with_gold(mut self, gold: Label) -> Self {
        self.gold = Some(gold);
        self
    }

    pub fn with_features(mut self, features: impl IntoIterator<Item = BiasFeature>) -> Self {
        self.features = Some(features.into_iter().collect());
        self
    }

    pub fn validate(&self) -> Result<(), SampleError> {
        if self.premise.trim().is_empty() {
            return Err(SampleError::EmptyPremise(self.id.clone()));
        }
        if self.hypothesis.trim().is_empty() {
            return Err(SampleError::EmptyHypothesis(self.id.clone()));
        }
        if let Some(features) = &self.features {
            check_one_per_type(&self.id, features)?;
        }
        Ok(())
    }
}

pub(crate) fn check_one_per_type(
    id: &str,
    features: &BTreeSet<BiasFeature>,
) -> Result<(), SampleError> {
    let mut seen = BTreeSet::new();
    for f in features {
        if !seen.insert(f.bias_type()) {
            return Err(SampleError::DuplicateType {
                id: id.to_string(),
                bias_type: f.bias_type(),
            });
        }
    }
    Ok(())
}

/// Counts per gold label, in label-index order.
pub fn label_counts<'a>(samples: impl IntoIterator<Item = &'a NliSample>) -> [usize; 3] {
    let mut counts = [0usize; 3];
    for s in samples {
        if let Some(g) = s.gold {
            counts[g.index()] += 1;
        }
    }
    counts
}
