use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::estimate::{estimate_feature_nie, estimate_lambdas, FeatureNie, GroupMoment, SolveDiagnostics, SolverOptions};
use super::select::{select_calibration_samples, CalibSampleSet, SelectionConfig};
use super::CalibError;
use crate::bias::{BiasFeature, BiasType};
use crate::detect::Detectors;
use crate::label::{argmax_label, uniform_dist, Label, ProbDist, ScoreVector};
use crate::sample::NliSample;
use crate::source::{sha256_hex, ProbSource, PromptMode, INSTRUCTION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_id: String,
    pub prompt_mode: String,
    pub prompt_hash: String,
    pub pool_hash: String,
    pub stage1_hash: String,
    pub stage2_hash: String,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProfile {
    pub known_types: BTreeSet<BiasType>,
    pub feature_nies: BTreeMap<BiasFeature, FeatureNie>,
    pub lambdas: BTreeMap<BiasType, f64>,
    pub diagnostics: SolveDiagnostics,
    #[serde(default)]
    pub groups: Vec<GroupMoment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl CalibrationProfile {
    /// A profile that changes nothing: zero effects, unit weights.
    pub fn zero(known_types: BTreeSet<BiasType>) -> CalibrationProfile {
        let feature_nies = known_types
            .iter()
            .flat_map(|t| t.features())
            .map(|f| {
                (*f, FeatureNie { feature: *f, nie: ScoreVector::ZERO, n_used: 0 })
            })
            .collect();
        let lambdas = known_types.iter().map(|t| (*t, 1.0)).collect();
        CalibrationProfile {
            diagnostics: SolveDiagnostics {
                residual_norm: 0.0,
                group_count: 0,
                equation_count: 0,
                unknowns: known_types.len(),
                rank: 0,
                condition_number: None,
                singular_values: Vec::new(),
                rank_deficient: false,
            },
            known_types,
            feature_nies,
            lambdas,
            groups: Vec::new(),
            provenance: None,
        }
    }

    pub fn validate(&self) -> Result<(), CalibError> {
        for (f, nie) in &self.feature_nies {
            if !self.known_types.contains(&f.bias_type()) {
                return Err(CalibError::InvalidProfile(format!("{f} is not of a known type")));
            }
            if nie.feature != *f || !nie.nie.is_finite() {
                return Err(CalibError::InvalidProfile(format!("bad effect entry for {f}")));
            }
        }
        let lambda_types: BTreeSet<BiasType> = self.lambdas.keys().copied().collect();
        if lambda_types != self.known_types {
            return Err(CalibError::InvalidProfile(
                "weights must cover exactly the known types".into(),
            ));
        }
        if self.lambdas.values().any(|l| !l.is_finite()) {
            return Err(CalibError::InvalidProfile("weights must be finite".into()));
        }
        Ok(())
    }

    pub fn lambda(&self, t: BiasType) -> f64 {
        self.lambdas.get(&t).copied().unwrap_or(0.0)
    }
}

/// Weighted sum of the features' effects.
pub fn combined_nie(
    features: &BTreeSet<BiasFeature>,
    profile: &CalibrationProfile,
) -> Result<ScoreVector, CalibError> {
    features.iter().try_fold(ScoreVector::ZERO, |acc, f| {
        let nie = profile.feature_nies.get(f).ok_or(CalibError::UnknownFeature(*f))?;
        Ok(acc + profile.lambda(f.bias_type()) * nie.nie)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Debiased {
    pub scores: ScoreVector,
    pub label: Label,
    /// Features skipped because their type is not known to the profile.
    pub ignored_unknown_type: usize,
    /// Features of a known type that the profile has no effect for.
    pub ignored_uncalibrated: usize,
}

/// Subtracts the combined effect of the sample's calibrated features from
/// its raw distribution.
pub fn debias(dist: &ProbDist, features: &BTreeSet<BiasFeature>, profile: &CalibrationProfile) -> Debiased {
    let mut ignored_unknown_type = 0;
    let mut ignored_uncalibrated = 0;
    let mut usable = BTreeSet::new();
    for f in features {
        if !profile.known_types.contains(&f.bias_type()) {
            ignored_unknown_type += 1;
        } else if !profile.feature_nies.contains_key(f) {
            ignored_uncalibrated += 1;
        } else {
            usable.insert(*f);
        }
    }
    let nie = combined_nie(&usable, profile).expect("filtered to calibrated features");
    let scores = *dist - nie;
    let label = argmax_label(&scores).unwrap_or_else(|_| dist.argmax());
    Debiased {
        scores,
        label,
        ignored_unknown_type,
        ignored_uncalibrated,
    }
}

/// Clips negative scores and renormalizes; all-nonpositive scores give the
/// uniform distribution.
pub fn report_probabilities(scores: &ScoreVector) -> ProbDist {
    ProbDist::from_weights(scores.0).unwrap_or_else(|_| uniform_dist())
}

/// How many dataset rows had which calibration coverage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageStats {
    pub rows: usize,
    /// Rows with no calibrated feature (nothing subtracted).
    pub rows_without_known_features: usize,
    pub ignored_unknown_type: usize,
    pub ignored_uncalibrated: usize,
}

impl CoverageStats {
    pub fn record(&mut self, d: &Debiased, features: &BTreeSet<BiasFeature>) {
        self.rows += 1;
        if features.len() == d.ignored_unknown_type + d.ignored_uncalibrated {
            self.rows_without_known_features += 1;
        }
        self.ignored_unknown_type += d.ignored_unknown_type;
        self.ignored_uncalibrated += d.ignored_uncalibrated;
    }
}

/// Runs both stages on `pool` and returns the fitted profile together with
/// the samples it was fitted on.
pub fn calibrate<S: ProbSource + ?Sized>(
    pool: &[NliSample],
    selection: &SelectionConfig,
    detectors: &Detectors,
    model: &S,
    mode: &PromptMode,
    opts: &SolverOptions,
    parallelism: usize,
) -> Result<(CalibrationProfile, CalibSampleSet), CalibError> {
    let set = select_calibration_samples(pool, selection, detectors)?;
    let mut feature_nies = BTreeMap::new();
    for (feature, samples) in &set.stage1 {
        feature_nies.insert(*feature, estimate_feature_nie(*feature, samples, model, mode, parallelism)?);
    }
    let fit = estimate_lambdas(
        &set.stage2,
        model,
        mode,
        &feature_nies,
        &selection.known_types,
        detectors,
        opts,
        parallelism,
    )?;
    let prompt_hash = sha256_hex(format!(
        "{INSTRUCTION}\n{}",
        serde_json::to_string(mode).expect("prompt mode serializes")
    ));
    let profile = CalibrationProfile {
        known_types: selection.known_types.clone(),
        feature_nies,
        lambdas: fit.lambdas,
        diagnostics: fit.diagnostics,
        groups: fit.groups,
        provenance: Some(Provenance {
            source_id: model.source_id(),
            prompt_mode: mode.id().to_string(),
            prompt_hash,
            pool_hash: set.pool_hash.clone(),
            stage1_hash: set.stage1_hash(),
            stage2_hash: set.stage2_hash(),
            n: selection.n,
            m: selection.m,
            seed: selection.seed,
        }),
    };
    profile.validate()?;
    Ok((profile, set))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn profile() -> CalibrationProfile {
        let known: BTreeSet<_> = [BiasType::SentenceLength, BiasType::SpeculativeWord].into_iter().collect();
        let mut p = CalibrationProfile::zero(known);
        p.feature_nies.get_mut(&BiasFeature::HypShorter).unwrap().nie = ScoreVector([0.1, -0.1, 0.0]);
        p.feature_nies.get_mut(&BiasFeature::Speculative).unwrap().nie = ScoreVector([0.06, 0.0, -0.06]);
        p.lambdas.insert(BiasType::SentenceLength, 0.8);
        p.lambdas.insert(BiasType::SpeculativeWord, 1.0);
        p
    }

    fn set(fs: &[BiasFeature]) -> BTreeSet<BiasFeature> {
        fs.iter().copied().collect()
    }

    #[test]
    fn combined_effects() {
        let p = profile();
        assert_eq!(combined_nie(&BTreeSet::new(), &p).unwrap(), ScoreVector::ZERO);
        let mut unit = p.clone();
        unit.lambdas.insert(BiasType::SentenceLength, 1.0);
        assert_eq!(combined_nie(&set(&[BiasFeature::HypShorter]), &unit).unwrap(), ScoreVector([0.1, -0.1, 0.0]));
        let both = combined_nie(&set(&[BiasFeature::HypShorter, BiasFeature::Speculative]), &p).unwrap();
        assert!(both.max_abs_diff(&ScoreVector([0.14, -0.08, -0.06])) < 1e-12);
        assert!(matches!(
            combined_nie(&set(&[BiasFeature::SemsimHigh]), &p),
            Err(CalibError::UnknownFeature(BiasFeature::SemsimHigh))
        ));
    }

    #[test]
    fn debias_flips_to_neutral() {
        let known: BTreeSet<_> = [BiasType::LexicalOverlap].into_iter().collect();
        let mut p = CalibrationProfile::zero(known);
        p.feature_nies.get_mut(&BiasFeature::OverlapHigh).unwrap().nie = ScoreVector([0.10, -0.12, 0.01]);
        let dist = ProbDist::new([0.45, 0.40, 0.15]).unwrap();
        assert_eq!(dist.argmax(), Label::Entailment);
        let d = debias(&dist, &set(&[BiasFeature::OverlapHigh]), &p);
        assert!(d.scores.max_abs_diff(&ScoreVector([0.35, 0.52, 0.14])) < 1e-12);
        assert_eq!(d.label, Label::Neutral);
    }

    #[test]
    fn zero_profile_is_a_no_op_and_unknowns_are_counted() {
        let p = CalibrationProfile::zero([BiasType::SentenceLength].into_iter().collect());
        let dist = ProbDist::new([0.2, 0.5, 0.3]).unwrap();
        let fs = set(&[BiasFeature::HypShorter, BiasFeature::Speculative]);
        let d = debias(&dist, &fs, &p);
        assert_eq!(d.label, dist.argmax());
        assert_eq!(d.ignored_unknown_type, 1);
        let mut cov = CoverageStats::default();
        cov.record(&d, &fs);
        cov.record(&debias(&dist, &BTreeSet::new(), &p), &BTreeSet::new());
        assert_eq!(cov.rows, 2);
        assert_eq!(cov.rows_without_known_features, 1);
    }

    #[test]
    fn reported_probabilities() {
        let same = report_probabilities(&ScoreVector([0.4, 0.35, 0.25]));
        assert_eq!(same.values(), [0.4, 0.35, 0.25]);
        let clipped = report_probabilities(&ScoreVector([0.9, 0.2, -0.1]));
        assert_abs_diff_eq!(clipped.values()[0], 0.9 / 1.1, epsilon = 1e-12);
        assert_abs_diff_eq!(clipped.values()[1], 0.2 / 1.1, epsilon = 1e-12);
        assert_eq!(clipped.values()[2], 0.0);
        assert_eq!(report_probabilities(&ScoreVector([-0.1, -0.2, -0.3])), uniform_dist());
    }

    #[test]
    fn profile_validation_and_json() {
        let p = profile();
        p.validate().unwrap();
        let json = serde_json::to_string(&p).unwrap();
        let back: CalibrationProfile = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
        assert!(json.contains(r#""lambdas":{"length":0.8,"speculative":1.0}"#), "{json}");
        let mut bad = p.clone();
        bad.lambdas.remove(&BiasType::SpeculativeWord);
        assert!(bad.validate().is_err());
    }
}
