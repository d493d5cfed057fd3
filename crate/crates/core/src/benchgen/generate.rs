use std::collections::{BTreeSet, HashSet};
use std::io::{self, BufRead, Write};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::template::{templates_of, Slots, Template, TemplateForm};
use super::vocab::Vocab;
use super::GenError;
use crate::bias::BiasFeature;
use crate::detect::{tokenize, Detectors};
use crate::label::Label;
use crate::sample::NliSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub total: usize,
    /// Target counts in label-index order.
    pub per_label: [usize; 3],
    pub seed: u64,
    pub max_attempts: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig::balanced(12_000, 42).expect("12000 splits evenly")
    }
}

impl GenConfig {
    pub fn balanced(total: usize, seed: u64) -> Result<GenConfig, GenError> {
        if !total.is_multiple_of(3) {
            return Err(GenError::Config(format!(
                "total {total} cannot be split evenly across three labels"
            )));
        }
        Ok(GenConfig {
            total,
            per_label: [total / 3; 3],
            seed,
            max_attempts: 200,
        })
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let sum: usize = self.per_label.iter().sum();
        if sum != self.total {
            return Err(GenError::Config(format!(
                "per-label counts {:?} sum to {sum}, not {}",
                self.per_label, self.total
            )));
        }
        if self.max_attempts == 0 {
            return Err(GenError::Config("max_attempts must be positive".into()));
        }
        Ok(())
    }
}

/// Which vocabulary entries filled a sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotProvenance {
    pub name: String,
    pub occupation: String,
    pub speculative: String,
    pub pair_index: usize,
}

/// One line of the benchmark JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    #[serde(flatten)]
    pub sample: NliSample,
    pub template_id: String,
    pub slots: SlotProvenance,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenStats {
    pub attempts: usize,
    pub accepted: usize,
    pub rejected_duplicate: usize,
    pub rejected_features: usize,
    pub rejected_gender_leak: usize,
}

impl GenStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.accepted as f64 / self.attempts as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
    pub stats: GenStats,
}

impl Dataset {
    pub fn samples(&self) -> impl Iterator<Item = &NliSample> {
        self.records.iter().map(|r| &r.sample)
    }

    pub fn write_jsonl<W: Write>(&self, out: W) -> io::Result<()> {
        write_records(&self.records, out)
    }
}

pub fn write_records<W: Write>(records: &[DatasetRecord], mut out: W) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_records<R: BufRead>(input: R) -> io::Result<Vec<DatasetRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)))?;
        out.push(record);
    }
    Ok(out)
}

/// Interleaves labels (E, N, C, E, ...) until each count is used up.
fn label_schedule(per_label: [usize; 3]) -> Vec<Label> {
    let mut left = per_label;
    let mut out = Vec::with_capacity(per_label.iter().sum());
    while left.iter().any(|&n| n > 0) {
        for label in Label::ALL {
            if left[label.index()] > 0 {
                left[label.index()] -= 1;
                out.push(label);
            }
        }
    }
    out
}

pub fn target_features() -> BTreeSet<BiasFeature> {
    BiasFeature::FIVE_BIAS.into_iter().collect()
}

/// Builds the benchmark by seeded rejection sampling.
///
/// Each candidate is drawn uniformly (template within the label's form,
/// verb-phrase pair, name, occupation, speculative word), then kept only if
/// it is new and the detectors find all five target features.
pub fn generate(cfg: &GenConfig, vocab: &Vocab, detectors: &Detectors) -> Result<Dataset, GenError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let targets = target_features();
    let neutral_templates: Vec<&Template> = templates_of(TemplateForm::NeutralForm).collect();
    let ec_templates: Vec<&Template> = templates_of(TemplateForm::EntailContradictForm).collect();
    let entail_pairs: Vec<usize> = vocab.pairs_with_label(Label::Entailment).map(|(i, _)| i).collect();
    let contra_pairs: Vec<usize> = vocab.pairs_with_label(Label::Contradiction).map(|(i, _)| i).collect();
    let lex = &vocab.lexicons;

    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut stats = GenStats::default();
    let mut records = Vec::with_capacity(cfg.total);

    for (index, label) in label_schedule(cfg.per_label).into_iter().enumerate() {
        let (templates, pairs) = match label {
            Label::Neutral => (&neutral_templates, &entail_pairs),
            Label::Entailment => (&ec_templates, &entail_pairs),
            Label::Contradiction => (&ec_templates, &contra_pairs),
        };
        let id = format!("5bias-{:05}", index + 1);
        let mut accepted = None;
        for _ in 0..cfg.max_attempts {
            stats.attempts += 1;
            let (Some(template), Some(&pair_index), Some(name), Some(occupation), Some(speculative)) = (
                templates.choose(&mut rng),
                pairs.choose(&mut rng),
                lex.unisex_names.choose(&mut rng),
                lex.male_biased_occupations.choose(&mut rng),
                lex.speculative_words.choose(&mut rng),
            ) else {
                return Err(GenError::EmptyVocab(label));
            };
            let pair = &vocab.pairs[pair_index];
            let slots = Slots {
                name: name.clone(),
                occupation: occupation.clone(),
                speculative: speculative.clone(),
                premise_phrase: pair.premise_phrase.clone(),
                hypothesis_phrase: pair.hypothesis_phrase.clone(),
                pair_label: pair.pair_label,
            };
            let mut sample = template.instantiate(id.clone(), &slots)?;
            debug_assert_eq!(sample.gold, Some(label));

            if template.form == TemplateForm::NeutralForm && lex.has_gendered_token(&tokenize(&sample.premise)) {
                stats.rejected_gender_leak += 1;
                continue;
            }
            let key = (sample.premise.clone(), sample.hypothesis.clone());
            if seen.contains(&key) {
                stats.rejected_duplicate += 1;
                continue;
            }
            let features = detectors.detect(&sample)?;
            if !targets.is_subset(&features) {
                stats.rejected_features += 1;
                continue;
            }
            seen.insert(key);
            sample.features = Some(features);
            accepted = Some(DatasetRecord {
                sample,
                template_id: template.id.to_string(),
                slots: SlotProvenance {
                    name: name.clone(),
                    occupation: occupation.clone(),
                    speculative: speculative.clone(),
                    pair_index,
                },
            });
            break;
        }
        match accepted {
            Some(r) => {
                stats.accepted += 1;
                records.push(r);
            }
            None => {
                return Err(GenError::RejectionBudget {
                    index,
                    label,
                    attempts: cfg.max_attempts,
                    acceptance_rate: stats.acceptance_rate(),
                })
            }
        }
    }
    Ok(Dataset { records, stats })
}
