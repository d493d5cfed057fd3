//! The bias taxonomy: five bias types, nine bias features, and the label
//! each feature pushes a model toward.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::Label;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("unknown bias type `{0}` (expected one of: length, overlap, semsim, speculative, gender)")]
    UnknownType(String),
    #[error("unknown bias feature `{0}`")]
    UnknownFeature(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BiasType {
    #[serde(rename = "length")]
    SentenceLength,
    #[serde(rename = "overlap")]
    LexicalOverlap,
    #[serde(rename = "semsim")]
    SemanticSimilarity,
    #[serde(rename = "speculative")]
    SpeculativeWord,
    #[serde(rename = "gender")]
    GenderOccupation,
}

impl BiasType {
    pub const ALL: [BiasType; 5] = [
        BiasType::SentenceLength,
        BiasType::LexicalOverlap,
        BiasType::SemanticSimilarity,
        BiasType::SpeculativeWord,
        BiasType::GenderOccupation,
    ];

    pub fn id(self) -> &'static str {
        match self {
            BiasType::SentenceLength => "length",
            BiasType::LexicalOverlap => "overlap",
            BiasType::SemanticSimilarity => "semsim",
            BiasType::SpeculativeWord => "speculative",
            BiasType::GenderOccupation => "gender",
        }
    }

    pub fn features(self) -> &'static [BiasFeature] {
        use BiasFeature::*;
        match self {
            BiasType::SentenceLength => &[HypShorter, HypLonger],
            BiasType::LexicalOverlap => &[OverlapHigh, OverlapLow],
            BiasType::SemanticSimilarity => &[SemsimHigh, SemsimLow],
            BiasType::SpeculativeWord => &[Speculative],
            BiasType::GenderOccupation => &[MaleWithMaleOccupation, MaleWithFemaleOccupation],
        }
    }
}

impl fmt::Display for BiasType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for BiasType {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "length" | "sentence-length" => Ok(BiasType::SentenceLength),
            "overlap" | "lexical-overlap" => Ok(BiasType::LexicalOverlap),
            "semsim" | "semantic-similarity" => Ok(BiasType::SemanticSimilarity),
            "speculative" | "speculative-word" => Ok(BiasType::SpeculativeWord),
            "gender" | "gender-occupation" => Ok(BiasType::GenderOccupation),
            other => Err(TaxonomyError::UnknownType(other.to_string())),
        }
    }
}

/// One concrete bias feature. Each belongs to exactly one [`BiasType`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BiasFeature {
    /// Hypothesis shorter than the premise by more than the gap threshold.
    #[serde(rename = "hyp-shorter")]
    HypShorter,
    #[serde(rename = "hyp-longer")]
    HypLonger,
    #[serde(rename = "overlap-high")]
    OverlapHigh,
    #[serde(rename = "overlap-low")]
    OverlapLow,
    #[serde(rename = "semsim-high")]
    SemsimHigh,
    #[serde(rename = "semsim-low")]
    SemsimLow,
    /// A speculative word occurs in either sentence.
    #[serde(rename = "speculative")]
    Speculative,
    /// Male-biased occupation in the premise, male pronoun in the hypothesis.
    #[serde(rename = "male-male-occupation")]
    MaleWithMaleOccupation,
    #[serde(rename = "male-female-occupation")]
    MaleWithFemaleOccupation,
}

impl BiasFeature {
    pub const ALL: [BiasFeature; 9] = [
        BiasFeature::HypShorter,
        BiasFeature::HypLonger,
        BiasFeature::OverlapHigh,
        BiasFeature::OverlapLow,
        BiasFeature::SemsimHigh,
        BiasFeature::SemsimLow,
        BiasFeature::Speculative,
        BiasFeature::MaleWithMaleOccupation,
        BiasFeature::MaleWithFemaleOccupation,
    ];

    /// The five features every benchmark sample carries; all push toward
    /// entailment.
    pub const FIVE_BIAS: [BiasFeature; 5] = [
        BiasFeature::HypShorter,
        BiasFeature::OverlapHigh,
        BiasFeature::SemsimHigh,
        BiasFeature::Speculative,
        BiasFeature::MaleWithMaleOccupation,
    ];

    pub fn id(self) -> &'static str {
        match self {
            BiasFeature::HypShorter => "hyp-shorter",
            BiasFeature::HypLonger => "hyp-longer",
            BiasFeature::OverlapHigh => "overlap-high",
            BiasFeature::OverlapLow => "overlap-low",
            BiasFeature::SemsimHigh => "semsim-high",
            BiasFeature::SemsimLow => "semsim-low",
            BiasFeature::Speculative => "speculative",
            BiasFeature::MaleWithMaleOccupation => "male-male-occupation",
            BiasFeature::MaleWithFemaleOccupation => "male-female-occupation",
        }
    }

    pub fn bias_type(self) -> BiasType {
        match self {
            BiasFeature::HypShorter | BiasFeature::HypLonger => BiasType::SentenceLength,
            BiasFeature::OverlapHigh | BiasFeature::OverlapLow => BiasType::LexicalOverlap,
            BiasFeature::SemsimHigh | BiasFeature::SemsimLow => BiasType::SemanticSimilarity,
            BiasFeature::Speculative => BiasType::SpeculativeWord,
            BiasFeature::MaleWithMaleOccupation | BiasFeature::MaleWithFemaleOccupation => {
                BiasType::GenderOccupation
            }
        }
    }

    /// The label a model over-predicts when this feature is present.
    pub fn polarity(self) -> Label {
        match self {
            BiasFeature::HypShorter
            | BiasFeature::OverlapHigh
            | BiasFeature::SemsimHigh
            | BiasFeature::Speculative
            | BiasFeature::MaleWithMaleOccupation => Label::Entailment,
            BiasFeature::HypLonger | BiasFeature::OverlapLow | BiasFeature::SemsimLow => {
                Label::Neutral
            }
            BiasFeature::MaleWithFemaleOccupation => Label::Contradiction,
        }
    }
}

impl fmt::Display for BiasFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for BiasFeature {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase();
        BiasFeature::ALL
            .into_iter()
            .find(|f| f.id() == key)
            .ok_or(TaxonomyError::UnknownFeature(key))
    }
}

/// Parses a comma-separated list of bias type ids.
pub fn parse_type_list(list: &str) -> Result<BTreeSet<BiasType>, TaxonomyError> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

/// The features of `features` whose type is in `known`.
pub fn restrict_to_known(
    features: &BTreeSet<BiasFeature>,
    known: &BTreeSet<BiasType>,
) -> BTreeSet<BiasFeature> {
    features
        .iter()
        .copied()
        .filter(|f| known.contains(&f.bias_type()))
        .collect()
}

/// Feature sets serialize as ids sorted alphabetically.
pub mod feature_set_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(set: &BTreeSet<BiasFeature>, s: S) -> Result<S::Ok, S::Error> {
        let mut ids: Vec<&str> = set.iter().map(|f| f.id()).collect();
        ids.sort_unstable();
        s.collect_seq(ids)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeSet<BiasFeature>, D::Error> {
        Vec::<BiasFeature>::deserialize(d).map(|v| v.into_iter().collect())
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(
            set: &Option<BTreeSet<BiasFeature>>,
            s: S,
        ) -> Result<S::Ok, S::Error> {
            match set {
                Some(set) => super::serialize(set, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(
            d: D,
        ) -> Result<Option<BTreeSet<BiasFeature>>, D::Error> {
            Option::<Vec<BiasFeature>>::deserialize(d).map(|o| o.map(|v| v.into_iter().collect()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_features_five_types() {
        assert_eq!(BiasFeature::ALL.len(), 9);
        for t in BiasType::ALL {
            for f in t.features() {
                assert_eq!(f.bias_type(), t);
            }
        }
        let total: usize = BiasType::ALL.iter().map(|t| t.features().len()).sum();
        assert_eq!(total, 9);
    }

    #[test]
    fn five_bias_features_are_co_polar() {
        let types: BTreeSet<_> = BiasFeature::FIVE_BIAS.iter().map(|f| f.bias_type()).collect();
        assert_eq!(types.len(), 5);
        assert!(BiasFeature::FIVE_BIAS.iter().all(|f| f.polarity() == Label::Entailment));
    }

    #[test]
    fn ids_round_trip() {
        for f in BiasFeature::ALL {
            assert_eq!(f.id().parse::<BiasFeature>().unwrap(), f);
            assert_eq!(serde_json::to_string(&f).unwrap(), format!("\"{}\"", f.id()));
        }
        for t in BiasType::ALL {
            assert_eq!(t.id().parse::<BiasType>().unwrap(), t);
        }
        let known = parse_type_list("overlap,length, semsim,speculative").unwrap();
        assert_eq!(known.len(), 4);
        assert!(!known.contains(&BiasType::GenderOccupation));
        assert!(parse_type_list("overlap,colour").is_err());
    }
}
