use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::bias::BiasFeature;
use crate::detect::Detectors;
use crate::label::{dist_mean, Label};
use crate::sample::{label_counts, NliSample};
use crate::source::{predict_all, ProbSource, PromptMode};

/// A label must beat its dataset share by at least this many percentage
/// points to count as the feature's polarity.
pub const POLARITY_MARGIN_PP: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarityReport {
    pub feature: BiasFeature,
    /// Mean predicted probability per label, in percent.
    pub predicted: [f64; 3],
    /// Share of argmax predictions per label, in percent.
    pub predicted_argmax: [f64; 3],
    /// Gold label shares of the probe set, in percent.
    pub dataset: [f64; 3],
    /// `None` serializes as "none".
    #[serde(with = "polarity_serde")]
    pub polarity: Option<Label>,
    pub sample_count: usize,
    pub source_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<String>,
}

mod polarity_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(p: &Option<Label>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(p.map_or("none", |l| l.as_str()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Label>, D::Error> {
        let raw = String::deserialize(d)?;
        if raw == "none" {
            return Ok(None);
        }
        raw.parse().map(Some).map_err(serde::de::Error::custom)
    }
}

/// The label whose predicted share most exceeds its dataset share, if the
/// excess reaches the margin. Ties go to the lowest label index.
pub fn infer_polarity(predicted: [f64; 3], dataset: [f64; 3]) -> Option<Label> {
    let excess: [f64; 3] = std::array::from_fn(|i| predicted[i] - dataset[i]);
    let mut best = 0;
    for i in 1..3 {
        if excess[i] > excess[best] {
            best = i;
        }
    }
    (excess[best] >= POLARITY_MARGIN_PP - 1e-9).then(|| Label::ALL[best])
}

/// Samples whose only feature is `feature`, truncated per label to the
/// smallest label count so the result is label-balanced. Pool order is kept.
pub fn probe_samples(pool: &[NliSample], feature: BiasFeature, detectors: &Detectors) -> Result<Vec<NliSample>, EvalError> {
    let mut eligible = Vec::with_capacity(pool.len());
    let mut counts = [0usize; 3];
    for s in pool {
        let label = match s.gold {
            Some(gold) if detectors.features_of(s)? == [feature].into() => {
                counts[gold.index()] += 1;
                Some(gold)
            }
            _ => None,
        };
        eligible.push(label);
    }
    let keep = counts.into_iter().min().unwrap_or(0);
    let mut taken = [0usize; 3];
    let mut out = Vec::with_capacity(keep * 3);
    for (s, label) in pool.iter().zip(eligible) {
        if let Some(l) = label {
            if taken[l.index()] < keep {
                taken[l.index()] += 1;
                out.push(s.clone());
            }
        }
    }
    Ok(out)
}

pub fn probe_polarity<S: ProbSource + ?Sized>(
    feature: BiasFeature,
    samples: &[NliSample],
    model: &S,
    mode: &PromptMode,
    parallelism: usize,
) -> Result<PolarityReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(s) = samples.iter().find(|s| s.gold.is_none()) {
        return Err(EvalError::MissingGold(s.id.clone()));
    }
    let preds = predict_all(model, samples, mode, parallelism)?;
    let mean = dist_mean(&preds)?;
    let n = samples.len() as f64;
    let mut argmax = [0.0; 3];
    for p in &preds {
        argmax[p.argmax().index()] += 100.0 / n;
    }
    let counts = label_counts(samples);
    let dataset = counts.map(|c| 100.0 * c as f64 / n);
    let predicted = mean.values().map(|v| 100.0 * v);
    Ok(PolarityReport {
        feature,
        predicted,
        predicted_argmax: argmax,
        dataset,
        polarity: infer_polarity(predicted, dataset),
        sample_count: samples.len(),
        source_id: model.source_id(),
        pool: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{synthetic_pool, OracleConfig, PoolGroup, SyntheticOracle};

    const BALANCED: [f64; 3] = [100.0 / 3.0; 3];

    #[test]
    fn polarity_calls() {
        assert_eq!(infer_polarity([43.7, 21.7, 34.4], BALANCED), Some(Label::Entailment));
        assert_eq!(infer_polarity([31.4, 40.1, 28.5], BALANCED), Some(Label::Neutral));
        assert_eq!(infer_polarity([33.3, 33.3, 33.3], BALANCED), None);
        assert_eq!(infer_polarity([34.5, 33.0, 32.5], BALANCED), None);
    }

    #[test]
    fn polarity_json() {
        let report = PolarityReport {
            feature: BiasFeature::Speculative,
            predicted: BALANCED,
            predicted_argmax: BALANCED,
            dataset: BALANCED,
            polarity: None,
            sample_count: 3,
            source_id: "x".into(),
            pool: None,
        };
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains(r#""polarity":"none""#));
        assert_eq!(serde_json::from_str::<PolarityReport>(&json).unwrap(), report);
    }

    #[test]
    fn probe_on_oracle() {
        let pool = synthetic_pool(
            &[
                PoolGroup { features: [BiasFeature::HypLonger].into_iter().collect(), per_label: 100 },
                PoolGroup { features: [BiasFeature::HypShorter].into_iter().collect(), per_label: 50 },
            ],
            3,
        );
        let det = Detectors::offline_default();
        let samples = probe_samples(&pool, BiasFeature::HypLonger, &det).unwrap();
        assert_eq!(label_counts(&samples), [100, 100, 100]);
        let oracle = SyntheticOracle::new(OracleConfig::polarity_study()).unwrap();
        let r = probe_polarity(BiasFeature::HypLonger, &samples, &oracle, &PromptMode::ZeroShot, 4).unwrap();
        assert_eq!(r.polarity, Some(Label::Neutral));
        for (got, want) in r.predicted.iter().zip([31.4, 40.1, 28.5]) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
        assert!((r.predicted.iter().sum::<f64>() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn unbiased_model_has_no_polarity() {
        let pool = synthetic_pool(&[PoolGroup { features: [BiasFeature::Speculative].into_iter().collect(), per_label: 10 }], 1);
        let oracle = SyntheticOracle::new(OracleConfig::unbiased(0.8)).unwrap();
        let r = probe_polarity(BiasFeature::Speculative, &pool, &oracle, &PromptMode::ZeroShot, 1).unwrap();
        assert_eq!(r.polarity, None);
        assert!(matches!(
            probe_polarity(BiasFeature::Speculative, &[], &oracle, &PromptMode::ZeroShot, 1),
            Err(EvalError::Empty)
        ));
    }
}
