//! A synthetic biased model with known, additive bias effects.
//!
//! The oracle starts from a bias-free distribution (`q` on the gold label,
//! the rest split evenly) and adds per-feature shift vectors. A sample with a
//! single shifted feature receives that feature's shift as is, so the shift is
//! exactly the effect a pure-sample estimate recovers. A sample with two or
//! more shifted features receives the weighted sum `sum_t weight(t) * shift`,
//! which makes the per-type weights the combination parameters a calibrator
//! should recover.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bias::{BiasFeature, BiasType};
use crate::label::{Label, ProbDist, ScoreVector};
use crate::sample::NliSample;
use crate::source::{sha256_hex, ModelError, ProbSource, PromptMode};

/// Shift vectors must sum to zero within this tolerance.
pub const SHIFT_SUM_TOLERANCE: f64 = 1e-9;

/// Predicted-label percentages (entailment, neutral, contradiction) from the
/// bias polarity probes, one row per feature.
pub const POLARITY_TABLE: [(BiasFeature, [f64; 3]); 9] = [
    (BiasFeature::HypShorter, [43.7, 21.7, 34.4]),
    (BiasFeature::HypLonger, [31.4, 40.1, 28.5]),
    (BiasFeature::OverlapLow, [30.3, 37.5, 32.2]),
    (BiasFeature::OverlapHigh, [40.9, 24.6, 34.5]),
    (BiasFeature::Speculative, [40.1, 27.7, 32.2]),
    (BiasFeature::SemsimHigh, [40.3, 27.2, 32.5]),
    (BiasFeature::SemsimLow, [30.6, 37.6, 31.8]),
    (BiasFeature::MaleWithMaleOccupation, [53.8, 11.5, 34.7]),
    (BiasFeature::MaleWithFemaleOccupation, [33.7, 16.1, 51.2]),
];

/// The "speculative word absent" control row; not a bias feature.
pub const SPECULATIVE_ABSENT_ROW: [f64; 3] = [32.8, 34.8, 32.4];

pub fn polarity_row(feature: BiasFeature) -> [f64; 3] {
    POLARITY_TABLE
        .iter()
        .find(|(f, _)| *f == feature)
        .map(|(_, row)| *row)
        .expect("every feature has a row")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Mass on the gold label before any bias is added.
    pub base_confidence: f64,
    pub shifts: BTreeMap<BiasFeature, ScoreVector>,
    /// Combination weight per bias type; missing types weigh 1.
    #[serde(default)]
    pub weights: BTreeMap<BiasType, f64>,
    #[serde(default)]
    pub noise_seed: u64,
    /// Half-width of the zero-sum uniform noise added per sample.
    #[serde(default)]
    pub noise_scale: f64,
}

impl OracleConfig {
    /// No bias at all: accuracy is fully determined by `q`.
    pub fn unbiased(q: f64) -> OracleConfig {
        OracleConfig {
            base_confidence: q,
            shifts: BTreeMap::new(),
            weights: BTreeMap::new(),
            noise_seed: 0,
            noise_scale: 0.0,
        }
    }

    /// One shift per feature, taken from the polarity table rows
    /// (renormalized to sum to one) minus the uniform distribution. On a
    /// label-balanced set of single-feature samples the mean prediction is
    /// then the renormalized row.
    pub fn polarity_study() -> OracleConfig {
        let shifts = POLARITY_TABLE
            .iter()
            .map(|(f, row)| {
                let total: f64 = row.iter().sum();
                (*f, ScoreVector(row.map(|v| v / total - 1.0 / 3.0)))
            })
            .collect();
        OracleConfig {
            base_confidence: 0.4,
            shifts,
            weights: BTreeMap::new(),
            noise_seed: 0,
            noise_scale: 0.0,
        }
    }

    /// The default five-bias world: co-polar entailment shifts, weak enough
    /// individually that no distribution is clipped, strong enough together
    /// that every neutral and contradiction sample flips to entailment.
    ///
    /// Length and semantic-similarity shifts take mass from neutral, overlap
    /// and speculative shifts take it from contradiction. Leaving any one of
    /// those four types uncorrected therefore flips exactly one of the two
    /// non-entailment labels, while the gender residual alone flips nothing.
    pub fn five_bias_default() -> OracleConfig {
        let weights: BTreeMap<BiasType, f64> = [
            (BiasType::SentenceLength, 0.5),
            (BiasType::LexicalOverlap, 1.0),
            (BiasType::SemanticSimilarity, 1.5),
            (BiasType::SpeculativeWord, 2.0),
            (BiasType::GenderOccupation, 0.5),
        ]
        .into_iter()
        .collect();
        // Effective (weighted) contributions on a full five-bias sample.
        let effective = [
            (BiasFeature::HypShorter, [0.10, -0.10, 0.0]),
            (BiasFeature::OverlapHigh, [0.10, 0.0, -0.10]),
            (BiasFeature::SemsimHigh, [0.10, -0.10, 0.0]),
            (BiasFeature::Speculative, [0.10, 0.0, -0.10]),
            (BiasFeature::MaleWithMaleOccupation, [0.04, -0.02, -0.02]),
        ];
        let shifts = effective
            .into_iter()
            .map(|(f, eff)| {
                let w = weights[&f.bias_type()];
                (f, ScoreVector(eff.map(|v| v / w)))
            })
            .collect();
        OracleConfig {
            base_confidence: 0.45,
            shifts,
            weights,
            noise_seed: 0,
            noise_scale: 0.0,
        }
    }

    pub fn weight(&self, t: BiasType) -> f64 {
        self.weights.get(&t).copied().unwrap_or(1.0)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let q = self.base_confidence;
        if !(q > 1.0 / 3.0 && q <= 1.0) {
            return Err(ModelError::Config(format!("base confidence {q} outside (1/3, 1]")));
        }
        for (f, s) in &self.shifts {
            if !s.is_finite() || s.sum().abs() > SHIFT_SUM_TOLERANCE {
                return Err(ModelError::Config(format!("shift for {f} must be finite and sum to 0, got {:?}", s.0)));
            }
        }
        if self.weights.values().any(|w| !w.is_finite()) {
            return Err(ModelError::Config("combination weights must be finite".into()));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(ModelError::Config(format!("noise scale {} must be >= 0", self.noise_scale)));
        }
        Ok(())
    }

    /// Total additive bias for a feature set.
    pub fn total_shift(&self, features: &BTreeSet<BiasFeature>) -> ScoreVector {
        let active: Vec<(BiasFeature, ScoreVector)> = features
            .iter()
            .filter_map(|f| self.shifts.get(f).map(|s| (*f, *s)))
            .collect();
        match active.as_slice() {
            [] => ScoreVector::ZERO,
            [(_, s)] => *s,
            many => many
                .iter()
                .fold(ScoreVector::ZERO, |acc, (f, s)| acc + self.weight(f.bias_type()) * *s),
        }
    }

    fn noise(&self, id: &str) -> ScoreVector {
        if self.noise_scale == 0.0 {
            return ScoreVector::ZERO;
        }
        let digest = Sha256::digest(id.as_bytes());
        let mut seed = [0u8; 8];
        seed.copy_from_slice(&digest[..8]);
        let mut rng = ChaCha8Rng::seed_from_u64(u64::from_le_bytes(seed) ^ self.noise_seed);
        let raw: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
        let mean = raw.iter().sum::<f64>() / 3.0;
        ScoreVector(raw.map(|r| (r - mean) * self.noise_scale))
    }
}

/// The bias-free distribution for `gold`.
pub fn base_distribution(gold: Label, q: f64) -> [f64; 3] {
    let mut out = [(1.0 - q) / 2.0; 3];
    out[gold.index()] = q;
    out
}

/// Pure function of the sample and the configuration.
pub fn oracle_predict(sample: &NliSample, cfg: &OracleConfig) -> Result<ProbDist, ModelError> {
    let gold = sample.gold.ok_or_else(|| ModelError::MissingInput {
        id: sample.id.clone(),
        what: "gold label",
    })?;
    let features = sample.features.as_ref().ok_or_else(|| ModelError::MissingInput {
        id: sample.id.clone(),
        what: "feature annotation",
    })?;
    let scores = ScoreVector(base_distribution(gold, cfg.base_confidence)) + cfg.total_shift(features) + cfg.noise(&sample.id);
    ProbDist::from_weights(scores.0).map_err(|e| ModelError::Config(e.to_string()))
}

/// [`oracle_predict`] behind the [`ProbSource`] interface. The prompt mode is
/// ignored.
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    cfg: OracleConfig,
    id: String,
}

impl SyntheticOracle {
    pub fn new(cfg: OracleConfig) -> Result<SyntheticOracle, ModelError> {
        cfg.validate()?;
        let json = serde_json::to_string(&cfg).map_err(|e| ModelError::Config(e.to_string()))?;
        let id = format!("oracle-{}", &sha256_hex(json)[..12]);
        Ok(SyntheticOracle { cfg, id })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.cfg
    }
}

impl ProbSource for SyntheticOracle {
    fn source_id(&self) -> String {
        self.id.clone()
    }

    fn predict(&self, sample: &NliSample, _mode: &PromptMode) -> Result<ProbDist, ModelError> {
        oracle_predict(sample, &self.cfg)
    }
}

/// How many annotated samples of one feature set to put in a pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolGroup {
    pub features: BTreeSet<BiasFeature>,
    pub per_label: usize,
}

/// Builds a label-balanced pool of pre-annotated samples for oracle runs.
/// Texts are placeholders; only gold labels and features matter to the
/// oracle. Sample order is shuffled under `seed`.
pub fn synthetic_pool(groups: &[PoolGroup], seed: u64) -> Vec<NliSample> {
    use rand::seq::SliceRandom;
    let mut out = Vec::new();
    for (g, group) in groups.iter().enumerate() {
        let tag: Vec<&str> = group.features.iter().map(|f| f.id()).collect();
        let tag = if tag.is_empty() { "none".to_string() } else { tag.join("+") };
        for label in Label::ALL {
            for i in 0..group.per_label {
                let premise = format!("Synthetic premise {g}-{i} with features {tag}.");
                let hypothesis = format!("Synthetic {label} hypothesis {g}-{i}.");
                let sample = NliSample {
                    id: String::new(),
                    premise,
                    hypothesis,
                    gold: Some(label),
                    features: Some(group.features.clone()),
                };
                out.push(sample);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    out.shuffle(&mut rng);
    for (i, s) in out.iter_mut().enumerate() {
        s.id = format!("pool-{:06}", i + 1);
    }
    out
}

/// Pool groups for calibrating over the five benchmark features: every
/// single feature plus every subset of two or more of the four non-gender
/// features.
pub fn calibration_pool_groups(per_label: usize) -> Vec<PoolGroup> {
    let mut groups: Vec<PoolGroup> = BiasFeature::FIVE_BIAS
        .iter()
        .map(|f| PoolGroup {
            features: [*f].into_iter().collect(),
            per_label,
        })
        .collect();
    let four: Vec<BiasFeature> = BiasFeature::FIVE_BIAS
        .into_iter()
        .filter(|f| f.bias_type() != BiasType::GenderOccupation)
        .collect();
    for mask in 1u32..(1 << four.len()) {
        if mask.count_ones() >= 2 {
            let features = four
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, f)| *f)
                .collect();
            groups.push(PoolGroup { features, per_label });
        }
    }
    groups
}
