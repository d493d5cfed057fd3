use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::label::Label;
use crate::sample::NliSample;

/// One predicted label for one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub label: Label,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub model: String,
    pub mode: String,
    pub method: String,
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelBreakdown {
    pub label: Label,
    pub total: usize,
    pub wrong: usize,
    /// `None` when the dataset has no sample of this gold label.
    pub error_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountBreakdown {
    pub feature_count: usize,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Rates are fractions in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: RunMeta,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub per_label: Vec<LabelBreakdown>,
    /// Accuracy by number of annotated bias features; samples without
    /// annotations are left out.
    pub by_feature_count: Vec<CountBreakdown>,
}

impl EvalReport {
    pub fn error_rate(&self, label: Label) -> Option<f64> {
        self.per_label[label.index()].error_rate
    }

    pub const CSV_HEADER: [&'static str; 10] = [
        "model",
        "mode",
        "method",
        "dataset",
        "seed",
        "total",
        "accuracy",
        "error_entailment",
        "error_neutral",
        "error_contradiction",
    ];

    pub fn csv_record(&self) -> Vec<String> {
        let pct = |v: f64| format!("{:.2}", 100.0 * v);
        let mut row = vec![
            self.meta.model.clone(),
            self.meta.mode.clone(),
            self.meta.method.clone(),
            self.meta.dataset.clone(),
            self.meta.seed.map(|s| s.to_string()).unwrap_or_default(),
            self.total.to_string(),
            pct(self.accuracy),
        ];
        row.extend(self.per_label.iter().map(|b| b.error_rate.map(pct).unwrap_or_default()));
        row
    }

    /// Writes a header and one row per report.
    pub fn write_csv<W: std::io::Write>(reports: &[EvalReport], out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        for r in reports {
            w.write_record(r.csv_record())?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Scores `predictions` against the gold labels of `dataset`. Every dataset
/// id needs exactly one prediction and vice versa.
pub fn evaluate(dataset: &[NliSample], predictions: &[Prediction], meta: RunMeta) -> Result<EvalReport, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut by_id: HashMap<&str, Label> = HashMap::with_capacity(predictions.len());
    for p in predictions {
        if by_id.insert(p.id.as_str(), p.label).is_some() {
            return Err(EvalError::DuplicateId(p.id.clone()));
        }
    }
    let mut seen = HashMap::with_capacity(dataset.len());
    let mut totals = [0usize; 3];
    let mut wrong = [0usize; 3];
    let mut by_count: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for s in dataset {
        if seen.insert(s.id.as_str(), ()).is_some() {
            return Err(EvalError::DuplicateId(s.id.clone()));
        }
        let gold = s.gold.ok_or_else(|| EvalError::MissingGold(s.id.clone()))?;
        let pred = *by_id
            .get(s.id.as_str())
            .ok_or_else(|| EvalError::MissingPrediction(s.id.clone()))?;
        let ok = pred == gold;
        totals[gold.index()] += 1;
        if !ok {
            wrong[gold.index()] += 1;
        }
        if let Some(f) = &s.features {
            let e = by_count.entry(f.len()).or_default();
            e.0 += 1;
            e.1 += usize::from(ok);
        }
    }
    if let Some(p) = predictions.iter().find(|p| !seen.contains_key(p.id.as_str())) {
        return Err(EvalError::UnexpectedPrediction(p.id.clone()));
    }
    let total = dataset.len();
    let correct = total - wrong.iter().sum::<usize>();
    Ok(EvalReport {
        meta,
        total,
        correct,
        accuracy: correct as f64 / total as f64,
        per_label: Label::ALL
            .into_iter()
            .map(|l| {
                let i = l.index();
                LabelBreakdown {
                    label: l,
                    total: totals[i],
                    wrong: wrong[i],
                    error_rate: (totals[i] > 0).then(|| wrong[i] as f64 / totals[i] as f64),
                }
            })
            .collect(),
        by_feature_count: by_count
            .into_iter()
            .map(|(feature_count, (total, correct))| CountBreakdown {
                feature_count,
                total,
                correct,
                accuracy: correct as f64 / total as f64,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced(n: usize) -> Vec<NliSample> {
        (0..n)
            .map(|i| {
                NliSample::new(format!("s{i}"), "p", "h")
                    .unwrap()
                    .with_gold(Label::ALL[i % 3])
                    .with_features(crate::bias::BiasFeature::FIVE_BIAS)
            })
            .collect()
    }

    fn predict(samples: &[NliSample], f: impl Fn(&NliSample) -> Label) -> Vec<Prediction> {
        samples.iter().map(|s| Prediction { id: s.id.clone(), label: f(s) }).collect()
    }

    #[test]
    fn perfect() {
        let ds = balanced(9);
        let r = evaluate(&ds, &predict(&ds, |s| s.gold.unwrap()), RunMeta::default()).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!(r.per_label.iter().all(|b| b.error_rate == Some(0.0)));
        assert_eq!(r.by_feature_count[0].feature_count, 5);
    }

    #[test]
    fn always_entailment() {
        let ds = balanced(12);
        let r = evaluate(&ds, &predict(&ds, |_| Label::Entailment), RunMeta::default()).unwrap();
        assert!((r.accuracy - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.error_rate(Label::Entailment), Some(0.0));
        assert_eq!(r.error_rate(Label::Neutral), Some(1.0));
        assert_eq!(r.error_rate(Label::Contradiction), Some(1.0));
    }

    #[test]
    fn two_of_three() {
        let ds = balanced(3);
        let r = evaluate(&ds, &predict(&ds, |_| Label::Neutral).into_iter().chain([]).collect::<Vec<_>>(), RunMeta::default()).unwrap();
        assert!((r.accuracy - 1.0 / 3.0).abs() < 1e-12);
        let mut preds = predict(&ds, |s| s.gold.unwrap());
        preds[2].label = Label::Entailment;
        let r = evaluate(&ds, &preds, RunMeta::default()).unwrap();
        assert_eq!(format!("{:.1}", 100.0 * r.accuracy), "66.7");
    }

    #[test]
    fn id_mismatches() {
        let ds = balanced(3);
        let mut preds = predict(&ds, |_| Label::Neutral);
        preds.pop();
        assert!(matches!(evaluate(&ds, &preds, RunMeta::default()), Err(EvalError::MissingPrediction(id)) if id == "s2"));
        let mut preds = predict(&ds, |_| Label::Neutral);
        preds.push(Prediction { id: "zz".into(), label: Label::Neutral });
        assert!(matches!(evaluate(&ds, &preds, RunMeta::default()), Err(EvalError::UnexpectedPrediction(_))));
    }

    #[test]
    fn missing_label_gives_no_rate() {
        let ds: Vec<_> = balanced(3).into_iter().filter(|s| s.gold != Some(Label::Contradiction)).collect();
        let r = evaluate(&ds, &predict(&ds, |_| Label::Entailment), RunMeta::default()).unwrap();
        assert_eq!(r.error_rate(Label::Contradiction), None);
    }

    #[test]
    fn csv_output() {
        let ds = balanced(3);
        let meta = RunMeta { model: "m".into(), mode: "zero-shot".into(), method: "vanilla".into(), dataset: "5bias".into(), seed: Some(1) };
        let r = evaluate(&ds, &predict(&ds, |_| Label::Entailment), meta).unwrap();
        let mut buf = Vec::new();
        EvalReport::write_csv(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "model,mode,method,dataset,seed,total,accuracy,error_entailment,error_neutral,error_contradiction\n\
             m,zero-shot,vanilla,5bias,1,3,33.33,0.00,100.00,100.00\n"
        );
    }
}
