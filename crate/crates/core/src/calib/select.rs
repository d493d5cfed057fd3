use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CalibError;
use crate::bias::{restrict_to_known, BiasFeature, BiasType};
use crate::detect::Detectors;
use crate::label::Label;
use crate::sample::NliSample;
use crate::source::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub known_types: BTreeSet<BiasType>,
    /// Stage-1 samples per feature.
    pub n: usize,
    /// Stage-2 samples in total.
    pub m: usize,
    pub seed: u64,
    /// Features to estimate effects for. Defaults to the five benchmark
    /// features that belong to a known type.
    pub features: BTreeSet<BiasFeature>,
}

impl SelectionConfig {
    pub fn new(known_types: BTreeSet<BiasType>, n: usize, m: usize, seed: u64) -> SelectionConfig {
        let features = BiasFeature::FIVE_BIAS
            .into_iter()
            .filter(|f| known_types.contains(&f.bias_type()))
            .collect();
        SelectionConfig {
            known_types,
            n,
            m,
            seed,
            features,
        }
    }

    pub fn with_features(mut self, features: impl IntoIterator<Item = BiasFeature>) -> SelectionConfig {
        self.features = features.into_iter().collect();
        self
    }

    pub fn validate(&self) -> Result<(), CalibError> {
        if self.known_types.is_empty() {
            return Err(CalibError::NoKnownTypes);
        }
        for (what, value) in [("n", self.n), ("m", self.m)] {
            if value == 0 || value % 3 != 0 {
                return Err(CalibError::NotDivisible { what, value });
            }
        }
        if let Some(f) = self.features.iter().find(|f| !self.known_types.contains(&f.bias_type())) {
            return Err(CalibError::InvalidProfile(format!(
                "feature {f} is not of a known type"
            )));
        }
        Ok(())
    }
}

/// What was missing when selection failed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    /// A feature id for stage 1, "stage-2" for stage 2.
    pub target: String,
    pub label: Option<Label>,
    pub needed: usize,
    pub available: usize,
}

impl fmt::Display for Shortfall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.label {
            Some(l) => write!(f, "{} needs {} {l} sample(s), found {}", self.target, self.needed, self.available),
            None => write!(f, "{} needs {} label-balanced triple(s), found {}", self.target, self.needed, self.available),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibSampleSet {
    pub known_types: BTreeSet<BiasType>,
    pub stage1: BTreeMap<BiasFeature, Vec<NliSample>>,
    pub stage2: Vec<NliSample>,
    /// Hash of the pool's sample ids, in order.
    pub pool_hash: String,
}

impl CalibSampleSet {
    pub fn stage1_hash(&self) -> String {
        let ids: Vec<String> = self
            .stage1
            .iter()
            .flat_map(|(f, v)| v.iter().map(move |s| format!("{f}:{}", s.id)))
            .collect();
        sha256_hex(ids.join("\n"))
    }

    pub fn stage2_hash(&self) -> String {
        let ids: Vec<&str> = self.stage2.iter().map(|s| s.id.as_str()).collect();
        sha256_hex(ids.join("\n"))
    }
}

struct Candidate<'a> {
    sample: &'a NliSample,
    known: BTreeSet<BiasFeature>,
    /// Carries features of types outside the known set.
    has_unknown: bool,
}

/// Shuffles, then moves candidates free of unknown-type features to the
/// front so residual unknown bias is avoided when the pool allows it.
fn order(cands: &mut Vec<&Candidate<'_>>, rng: &mut ChaCha8Rng) {
    cands.shuffle(rng);
    cands.sort_by_key(|c| c.has_unknown);
}

/// Picks stage-1 and stage-2 calibration samples from a labeled pool.
///
/// Stage 1: for each feature, `n / 3` samples per label whose known features
/// are exactly that one feature. Stage 2: `m / 3` label-balanced triples,
/// each triple sharing one known-feature set of size two or more (size one
/// when only one type is known), drawn round-robin across the distinct sets.
/// Stage-2 samples never reuse stage-1 samples.
pub fn select_calibration_samples(
    pool: &[NliSample],
    cfg: &SelectionConfig,
    detectors: &Detectors,
) -> Result<CalibSampleSet, CalibError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut candidates = Vec::with_capacity(pool.len());
    for s in pool {
        let gold = s.gold.ok_or_else(|| CalibError::MissingGold(s.id.clone()))?;
        let all = detectors.features_of(s)?;
        let known = restrict_to_known(&all, &cfg.known_types);
        let has_unknown = all.len() > known.len();
        candidates.push((gold, Candidate { sample: s, known, has_unknown }));
    }

    let per_label1 = cfg.n / 3;
    let mut shortfalls = Vec::new();
    let mut used: HashSet<String> = HashSet::new();
    let mut stage1 = BTreeMap::new();
    for feature in &cfg.features {
        let mut picked = Vec::with_capacity(cfg.n);
        for label in Label::ALL {
            let mut pure: Vec<&Candidate> = candidates
                .iter()
                .filter(|(g, c)| *g == label && c.known.len() == 1 && c.known.contains(feature))
                .map(|(_, c)| c)
                .collect();
            order(&mut pure, &mut rng);
            if pure.len() < per_label1 {
                shortfalls.push(Shortfall {
                    target: feature.id().to_string(),
                    label: Some(label),
                    needed: per_label1,
                    available: pure.len(),
                });
                continue;
            }
            picked.extend(pure[..per_label1].iter().map(|c| c.sample.clone()));
        }
        used.extend(picked.iter().map(|s| s.id.clone()));
        stage1.insert(*feature, picked);
    }

    // Stage 2: group eligible candidates by known-feature set, then by label.
    let min_features = if cfg.known_types.len() == 1 { 1 } else { 2 };
    let mut groups: BTreeMap<&BTreeSet<BiasFeature>, [Vec<&Candidate>; 3]> = BTreeMap::new();
    for (gold, c) in &candidates {
        if c.known.len() >= min_features && c.known.is_subset(&cfg.features) && !used.contains(&c.sample.id) {
            groups.entry(&c.known).or_default()[gold.index()].push(c);
        }
    }
    for lists in groups.values_mut() {
        for list in lists.iter_mut() {
            order(list, &mut rng);
        }
    }
    let triples_needed = cfg.m / 3;
    let available: usize = groups.values().map(|l| l.iter().map(Vec::len).min().unwrap_or(0)).sum();
    if available < triples_needed {
        shortfalls.push(Shortfall {
            target: "stage-2".into(),
            label: None,
            needed: triples_needed,
            available,
        });
    }
    if !shortfalls.is_empty() {
        return Err(CalibError::Shortfall(shortfalls));
    }

    let mut stage2 = Vec::with_capacity(cfg.m);
    let mut depth = 0;
    while stage2.len() < cfg.m {
        for lists in groups.values() {
            if stage2.len() == cfg.m {
                break;
            }
            if lists.iter().all(|l| l.len() > depth) {
                stage2.extend(lists.iter().map(|l| l[depth].sample.clone()));
            }
        }
        depth += 1;
    }

    let ids: Vec<&str> = pool.iter().map(|s| s.id.as_str()).collect();
    Ok(CalibSampleSet {
        known_types: cfg.known_types.clone(),
        stage1,
        stage2,
        pool_hash: sha256_hex(ids.join("\n")),
    })
}
