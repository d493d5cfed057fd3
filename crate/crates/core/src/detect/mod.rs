//! Deterministic detectors for the nine bias features.
//!
//! | type        | feature             | rule                                                  |
//! |-------------|---------------------|-------------------------------------------------------|
//! | length      | hyp-shorter/longer  | token-count gap greater than `length_gap_words`       |
//! | overlap     | overlap-high/low    | hypothesis-relative unique-token overlap vs. bounds   |
//! | semsim      | semsim-high/low     | similarity score vs. scorer-specific bounds           |
//! | speculative | speculative         | a speculative word in either sentence                 |
//! | gender      | male-male/-female   | biased occupation in premise, male pronoun in hypothesis |

mod lexicon;
mod similarity;
mod tokenize;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lexicon::{
    LexiconError, Lexicons, FEMALE_OCCUPATIONS_FILE, FEMALE_PRONOUNS_FILE, MALE_OCCUPATIONS_FILE,
    MALE_OCCUPATION_COUNT, MALE_PRONOUNS_FILE, NAMES_FILE, SPECULATIVE_FILE, SPECULATIVE_WORDS,
    UNISEX_NAME_COUNT,
};
pub(crate) use lexicon::{entries, read_file};
pub use similarity::{ConstantScorer, ScorerError, SimilarityScorer, TokenF1Scorer};
pub use tokenize::{tokenize, unique_tokens};

use crate::bias::BiasFeature;
use crate::sample::{check_one_per_type, NliSample};

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("hypothesis has no tokens")]
    EmptyHypothesis,
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error("scorer `{0}` is not BERTScore-compatible and has no thresholds in the detector config")]
    MissingThresholds(String),
    #[error("invalid detector config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Sample(#[from] crate::sample::SampleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemsimThresholds {
    pub high: f64,
    pub low: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub length_gap_words: usize,
    pub overlap_high: f64,
    pub overlap_low: f64,
    /// Used by BERTScore-compatible scorers.
    pub semsim_high: f64,
    pub semsim_low: f64,
    /// Bounds for every other scorer, keyed by scorer id.
    pub scorer_thresholds: BTreeMap<String, SemsimThresholds>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        let mut scorer_thresholds = BTreeMap::new();
        scorer_thresholds.insert(
            TokenF1Scorer::ID.to_string(),
            SemsimThresholds { high: 0.55, low: 0.25 },
        );
        DetectorConfig {
            length_gap_words: 5,
            overlap_high: 0.8,
            overlap_low: 0.2,
            semsim_high: 0.88,
            semsim_low: 0.83,
            scorer_thresholds,
        }
    }
}

impl DetectorConfig {
    /// Negated comparisons also reject NaN bounds.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), DetectError> {
        if self.length_gap_words < 1 {
            return Err(DetectError::InvalidConfig("length_gap_words must be at least 1".into()));
        }
        if !(self.overlap_low < self.overlap_high) {
            return Err(DetectError::InvalidConfig("overlap_low must be below overlap_high".into()));
        }
        if !(self.semsim_low < self.semsim_high) {
            return Err(DetectError::InvalidConfig("semsim_low must be below semsim_high".into()));
        }
        for (id, t) in &self.scorer_thresholds {
            if !(t.low < t.high) {
                return Err(DetectError::InvalidConfig(format!(
                    "thresholds for scorer `{id}`: low must be below high"
                )));
            }
        }
        Ok(())
    }

    pub fn semsim_thresholds(&self, scorer: &dyn SimilarityScorer) -> Result<SemsimThresholds, DetectError> {
        if scorer.bertscore_compatible() {
            return Ok(SemsimThresholds {
                high: self.semsim_high,
                low: self.semsim_low,
            });
        }
        self.scorer_thresholds
            .get(scorer.scorer_id())
            .copied()
            .ok_or_else(|| DetectError::MissingThresholds(scorer.scorer_id().to_string()))
    }
}

/// |unique(premise) ∩ unique(hypothesis)| / |unique(hypothesis)|
pub fn lexical_overlap(premise: &str, hypothesis: &str) -> Result<f64, DetectError> {
    let h = unique_tokens(hypothesis);
    if h.is_empty() {
        return Err(DetectError::EmptyHypothesis);
    }
    let p = unique_tokens(premise);
    Ok(h.intersection(&p).count() as f64 / h.len() as f64)
}

pub fn length_feature(premise: &str, hypothesis: &str, cfg: &DetectorConfig) -> Option<BiasFeature> {
    let p = tokenize(premise).len() as i64;
    let h = tokenize(hypothesis).len() as i64;
    let gap = cfg.length_gap_words as i64;
    if p - h > gap {
        Some(BiasFeature::HypShorter)
    } else if h - p > gap {
        Some(BiasFeature::HypLonger)
    } else {
        None
    }
}

pub fn overlap_feature(
    premise: &str,
    hypothesis: &str,
    cfg: &DetectorConfig,
) -> Result<Option<BiasFeature>, DetectError> {
    let rate = lexical_overlap(premise, hypothesis)?;
    Ok(if rate > cfg.overlap_high {
        Some(BiasFeature::OverlapHigh)
    } else if rate < cfg.overlap_low {
        Some(BiasFeature::OverlapLow)
    } else {
        None
    })
}

pub fn speculative_feature(premise: &str, hypothesis: &str, lex: &Lexicons) -> Option<BiasFeature> {
    (lex.has_speculative(&tokenize(premise)) || lex.has_speculative(&tokenize(hypothesis)))
        .then_some(BiasFeature::Speculative)
}

/// Male pronoun in the hypothesis plus a biased occupation in the premise.
/// A premise naming both a male- and a female-biased occupation is
/// ambiguous and yields nothing.
pub fn gender_occupation_feature(premise: &str, hypothesis: &str, lex: &Lexicons) -> Option<BiasFeature> {
    if !lex.has_male_pronoun(&tokenize(hypothesis)) {
        return None;
    }
    let p = tokenize(premise);
    match (lex.has_male_biased_occupation(&p), lex.has_female_biased_occupation(&p)) {
        (true, false) => Some(BiasFeature::MaleWithMaleOccupation),
        (false, true) => Some(BiasFeature::MaleWithFemaleOccupation),
        _ => None,
    }
}

pub fn semsim_feature(
    premise: &str,
    hypothesis: &str,
    scorer: &dyn SimilarityScorer,
    cfg: &DetectorConfig,
) -> Result<Option<BiasFeature>, DetectError> {
    let bounds = cfg.semsim_thresholds(scorer)?;
    let score = scorer.score(premise, hypothesis)?;
    if !(0.0..=1.0).contains(&score) {
        return Err(ScorerError::OutOfRange {
            scorer: scorer.scorer_id().to_string(),
            value: score,
        }
        .into());
    }
    Ok(if score > bounds.high {
        Some(BiasFeature::SemsimHigh)
    } else if score < bounds.low {
        Some(BiasFeature::SemsimLow)
    } else {
        None
    })
}

/// Union of the five detectors; at most one feature per bias type.
pub fn detect_all(
    sample: &NliSample,
    lex: &Lexicons,
    scorer: &dyn SimilarityScorer,
    cfg: &DetectorConfig,
) -> Result<BTreeSet<BiasFeature>, DetectError> {
    let (p, h) = (sample.premise.as_str(), sample.hypothesis.as_str());
    let mut found = BTreeSet::new();
    found.extend(length_feature(p, h, cfg));
    found.extend(overlap_feature(p, h, cfg)?);
    found.extend(semsim_feature(p, h, scorer, cfg)?);
    found.extend(speculative_feature(p, h, lex));
    found.extend(gender_occupation_feature(p, h, lex));
    check_one_per_type(&sample.id, &found)?;
    Ok(found)
}

/// Lexicons, scorer and thresholds bundled for reuse across a run.
#[derive(Clone)]
pub struct Detectors {
    pub lexicons: Lexicons,
    pub scorer: Arc<dyn SimilarityScorer>,
    pub config: DetectorConfig,
}

impl Detectors {
    pub fn new(
        lexicons: Lexicons,
        scorer: Arc<dyn SimilarityScorer>,
        config: DetectorConfig,
    ) -> Result<Self, DetectError> {
        config.validate()?;
        config.semsim_thresholds(scorer.as_ref())?;
        Ok(Detectors {
            lexicons,
            scorer,
            config,
        })
    }

    /// Built-in lexicons, the token-F1 proxy scorer and default thresholds.
    pub fn offline_default() -> Self {
        Detectors::new(Lexicons::builtin(), Arc::new(TokenF1Scorer), DetectorConfig::default())
            .expect("default detector config is valid")
    }

    pub fn detect(&self, sample: &NliSample) -> Result<BTreeSet<BiasFeature>, DetectError> {
        detect_all(sample, &self.lexicons, self.scorer.as_ref(), &self.config)
    }

    /// Returns the sample's features, running detection only if absent.
    pub fn features_of(&self, sample: &NliSample) -> Result<BTreeSet<BiasFeature>, DetectError> {
        match &sample.features {
            Some(f) => Ok(f.clone()),
            None => self.detect(sample),
        }
    }
}

impl std::fmt::Debug for Detectors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Detectors")
            .field("scorer", &self.scorer.scorer_id())
            .field("config", &self.config)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bias::BiasFeature::*;

    const ROW1_P: &str = "Noah is a plumber. He builds furniture to decorate the home and save costs, using recycled wood.";
    const ROW1_H: &str = "He might build furniture to decorate the home and save costs.";

    fn bert(value: f64) -> ConstantScorer {
        ConstantScorer {
            id: "fixed-bertscore".into(),
            value,
            bertscore_compatible: true,
        }
    }

    #[test]
    fn overlap_examples() {
        assert_eq!(lexical_overlap("the cat sat", "the cat sat").unwrap(), 1.0);
        assert_eq!(lexical_overlap("the cat sat", "dogs run").unwrap(), 0.0);
        assert!((lexical_overlap("a b c d", "b c e").unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(lexical_overlap("a", "..."), Err(DetectError::EmptyHypothesis)));
    }

    #[test]
    fn length_examples() {
        let cfg = DetectorConfig::default();
        assert_eq!(length_feature(ROW1_P, ROW1_H, &cfg), Some(HypShorter));
        assert_eq!(length_feature("a b c", "d e f", &cfg), None);
        assert_eq!(length_feature("a b c d e", "a b c d e f g h i j k l", &cfg), Some(HypLonger));
        // exactly five words apart is not "more than five"
        assert_eq!(length_feature("a b c d e f", "a", &cfg), None);
    }

    #[test]
    fn speculative_examples() {
        let lex = Lexicons::builtin();
        assert_eq!(speculative_feature(ROW1_P, ROW1_H, &lex), Some(Speculative));
        assert_eq!(speculative_feature("the sky is blue", "it is blue", &lex), None);
        assert_eq!(speculative_feature("you must leave", "you leave", &lex), Some(Speculative));
    }

    #[test]
    fn gender_examples() {
        let lex = Lexicons::builtin();
        assert_eq!(gender_occupation_feature(ROW1_P, ROW1_H, &lex), Some(MaleWithMaleOccupation));
        assert_eq!(gender_occupation_feature(ROW1_P, "They build furniture.", &lex), None);
        assert_eq!(
            gender_occupation_feature("Quinn is a nurse.", "He helps patients.", &lex),
            Some(MaleWithFemaleOccupation)
        );
        assert_eq!(
            gender_occupation_feature("The nurse met the plumber.", "He left.", &lex),
            None
        );
    }

    #[test]
    fn semsim_examples() {
        let cfg = DetectorConfig::default();
        assert_eq!(semsim_feature("p", "h", &bert(0.91), &cfg).unwrap(), Some(SemsimHigh));
        assert_eq!(semsim_feature("p", "h", &bert(0.85), &cfg).unwrap(), None);
        assert_eq!(semsim_feature("p", "h", &bert(0.80), &cfg).unwrap(), Some(SemsimLow));

        let other = ConstantScorer {
            id: "mystery".into(),
            value: 0.9,
            bertscore_compatible: false,
        };
        assert!(matches!(
            semsim_feature("p", "h", &other, &cfg),
            Err(DetectError::MissingThresholds(id)) if id == "mystery"
        ));
    }

    #[test]
    fn detect_all_table_row() {
        let lex = Lexicons::builtin();
        let cfg = DetectorConfig::default();
        let s = NliSample::new("r1", ROW1_P, ROW1_H).unwrap();
        let found = detect_all(&s, &lex, &bert(0.9), &cfg).unwrap();
        let want: BTreeSet<_> = BiasFeature::FIVE_BIAS.into_iter().collect();
        assert_eq!(found, want);
    }

    #[test]
    fn detect_all_control_and_single() {
        let lex = Lexicons::builtin();
        let cfg = DetectorConfig::default();
        // similar length, partial overlap, mid similarity, no hedges, no gender
        let control = NliSample::new("c", "The red car is parked outside.", "A blue car is parked.").unwrap();
        assert!(detect_all(&control, &lex, &bert(0.85), &cfg).unwrap().is_empty());

        let spec_only = NliSample::new("s", "The red car is parked outside.", "A blue car might be parked.").unwrap();
        let got = detect_all(&spec_only, &lex, &bert(0.85), &cfg).unwrap();
        assert_eq!(got, BTreeSet::from([Speculative]));
    }

    #[test]
    fn config_validation() {
        let cfg = DetectorConfig { overlap_low: 0.9, ..DetectorConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = DetectorConfig { length_gap_words: 0, ..DetectorConfig::default() };
        assert!(cfg.validate().is_err());
        assert!(DetectorConfig::default().validate().is_ok());
    }
}
