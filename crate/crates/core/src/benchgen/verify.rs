use std::collections::{BTreeMap, HashSet};
use std::thread;

use serde::{Deserialize, Serialize};

use super::generate::target_features;
use crate::bias::BiasFeature;
use crate::detect::{DetectError, Detectors};
use crate::label::Label;
use crate::sample::{label_counts, NliSample};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub id: String,
    pub missing: Vec<BiasFeature>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub total: usize,
    /// Samples carrying each target feature, keyed by feature id.
    pub feature_pass: BTreeMap<String, usize>,
    pub label_counts: BTreeMap<Label, usize>,
    pub duplicates: usize,
    pub failures: Vec<SampleFailure>,
    pub detector_errors: Vec<String>,
    /// Filled in by the generator; verification alone cannot know it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acceptance_rate: Option<f64>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.failures.is_empty() && self.detector_errors.is_empty() && self.duplicates == 0
    }

    pub fn failure_count(&self) -> usize {
        self.failures.iter().map(|f| f.missing.len()).sum()
    }
}

/// Re-runs detection on every sample and checks the five target features,
/// label counts and (premise, hypothesis) uniqueness. Detection fans out
/// over worker threads; results keep dataset order.
pub fn verify_dataset(samples: &[NliSample], detectors: &Detectors) -> VerifyReport {
    let targets = target_features();
    let workers = thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(16);
    let chunk = samples.len().div_ceil(workers).max(1);
    let detected: Vec<Result<_, DetectError>> = thread::scope(|scope| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|s| detectors.detect(s)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("detector thread panicked"))
            .collect()
    });

    let mut feature_pass: BTreeMap<String, usize> = targets.iter().map(|f| (f.id().to_string(), 0)).collect();
    let mut failures = Vec::new();
    let mut detector_errors = Vec::new();
    for (sample, result) in samples.iter().zip(detected) {
        match result {
            Ok(found) => {
                let mut missing = Vec::new();
                for f in &targets {
                    if found.contains(f) {
                        *feature_pass.get_mut(f.id()).expect("seeded above") += 1;
                    } else {
                        missing.push(*f);
                    }
                }
                if !missing.is_empty() {
                    failures.push(SampleFailure { id: sample.id.clone(), missing });
                }
            }
            Err(e) => detector_errors.push(format!("{}: {e}", sample.id)),
        }
    }

    let mut seen = HashSet::new();
    let duplicates = samples
        .iter()
        .filter(|s| !seen.insert((s.premise.as_str(), s.hypothesis.as_str())))
        .count();
    let counts = label_counts(samples);

    VerifyReport {
        total: samples.len(),
        feature_pass,
        label_counts: Label::ALL.into_iter().map(|l| (l, counts[l.index()])).collect(),
        duplicates,
        failures,
        detector_errors,
        acceptance_rate: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchgen::{generate, GenConfig, Vocab};

    fn small() -> Vec<NliSample> {
        let ds = generate(&GenConfig::balanced(30, 11).unwrap(), &Vocab::builtin(), &Detectors::offline_default()).unwrap();
        ds.samples().cloned().collect()
    }

    #[test]
    fn generated_set_passes() {
        let report = verify_dataset(&small(), &Detectors::offline_default());
        assert!(report.all_pass(), "{report:?}");
        assert_eq!(report.total, 30);
        assert!(report.feature_pass.values().all(|&n| n == 30));
        assert!(report.label_counts.values().all(|&n| n == 10));
    }

    #[test]
    fn one_mutation_one_failure() {
        let mut samples = small();
        let victim = &mut samples[4];
        let spec = victim.hypothesis.split_whitespace().nth(1).unwrap().to_string();
        victim.hypothesis = victim.hypothesis.replacen(&spec, "will", 1);
        let report = verify_dataset(&samples, &Detectors::offline_default());
        assert_eq!(report.failure_count(), 1, "{report:?}");
        assert_eq!(report.failures[0].id, samples[4].id);
        assert_eq!(report.failures[0].missing, [BiasFeature::Speculative]);
    }

    #[test]
    fn empty_and_duplicate() {
        let report = verify_dataset(&[], &Detectors::offline_default());
        assert_eq!(report.total, 0);
        assert!(report.feature_pass.values().all(|&n| n == 0));
        assert!(report.label_counts.values().all(|&n| n == 0));

        let mut samples = small();
        samples.push(samples[0].clone());
        assert_eq!(verify_dataset(&samples, &Detectors::offline_default()).duplicates, 1);
    }
}
