//! Prompt construction and the [`ProbSource`] abstraction: anything that
//! turns a sample into a distribution over the three labels.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::label::{Label, ProbDist};
use crate::sample::NliSample;

/// The fixed task instruction placed at the top of every prompt.
pub const INSTRUCTION: &str = include_str!("../prompts/nli_instruction.txt");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("request failed after {attempts} attempt(s): {message}")]
    Network { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("unparseable model response: {message}")]
    Unparseable { message: String },
    #[error("no cached prediction for key {0} and the cache is offline")]
    CacheMiss(String),
    #[error("sample `{id}` has no {what}")]
    MissingInput { id: String, what: &'static str },
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("cache I/O: {0}")]
    Io(String),
}

impl ModelError {
    /// True for failures that mean the model could not be reached.
    pub fn is_network(&self) -> bool {
        matches!(self, ModelError::Network { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demo {
    pub premise: String,
    pub hypothesis: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum PromptMode {
    ZeroShot,
    /// Exactly three demonstrations, one per label.
    FewShot { demos: Vec<Demo> },
}

impl PromptMode {
    pub fn few_shot(demos: Vec<Demo>) -> Result<PromptMode, ModelError> {
        let mut labels: Vec<Label> = demos.iter().map(|d| d.label).collect();
        labels.sort();
        if labels != Label::ALL {
            return Err(ModelError::Config(format!(
                "few-shot needs exactly one demonstration per label, got {labels:?}"
            )));
        }
        Ok(PromptMode::FewShot { demos })
    }

    /// Draws one labeled demonstration per label from `pool` and shuffles
    /// their order.
    pub fn sample_few_shot(pool: &[NliSample], seed: u64) -> Result<PromptMode, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut demos = Vec::with_capacity(3);
        for label in Label::ALL {
            let candidates: Vec<&NliSample> = pool.iter().filter(|s| s.gold == Some(label)).collect();
            let pick = candidates
                .choose(&mut rng)
                .ok_or_else(|| ModelError::Config(format!("demonstration pool has no {label} sample")))?;
            demos.push(Demo {
                premise: pick.premise.clone(),
                hypothesis: pick.hypothesis.clone(),
                label,
            });
        }
        demos.shuffle(&mut rng);
        PromptMode::few_shot(demos)
    }

    pub fn id(&self) -> &'static str {
        match self {
            PromptMode::ZeroShot => "zero-shot",
            PromptMode::FewShot { .. } => "few-shot",
        }
    }
}

/// The user message sent for `sample`.
pub fn render_prompt(sample: &NliSample, mode: &PromptMode) -> String {
    let mut out = String::from(INSTRUCTION.trim_end());
    out.push_str("\n\n");
    if let PromptMode::FewShot { demos } = mode {
        for d in demos {
            out.push_str(&format!(
                "Premise: {}\nHypothesis: {}\nAnswer: {}\n\n",
                d.premise, d.hypothesis, d.label
            ));
        }
    }
    out.push_str(&format!(
        "Premise: {}\nHypothesis: {}\nAnswer:",
        sample.premise, sample.hypothesis
    ));
    out
}

pub fn sha256_hex(data: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(data.as_ref()))
}

/// A model that yields label distributions.
pub trait ProbSource: Send + Sync {
    /// Stable identity used for cache keys and provenance.
    fn source_id(&self) -> String;

    fn predict(&self, sample: &NliSample, mode: &PromptMode) -> Result<ProbDist, ModelError>;
}

impl<T: ProbSource + ?Sized> ProbSource for &T {
    fn source_id(&self) -> String {
        (**self).source_id()
    }

    fn predict(&self, sample: &NliSample, mode: &PromptMode) -> Result<ProbDist, ModelError> {
        (**self).predict(sample, mode)
    }
}

impl<T: ProbSource + ?Sized> ProbSource for std::sync::Arc<T> {
    fn source_id(&self) -> String {
        (**self).source_id()
    }

    fn predict(&self, sample: &NliSample, mode: &PromptMode) -> Result<ProbDist, ModelError> {
        (**self).predict(sample, mode)
    }
}

/// Predicts every sample with at most `parallelism` calls in flight.
/// Output order matches input order; the first error stops the batch.
pub fn predict_all<S: ProbSource + ?Sized>(
    source: &S,
    samples: &[NliSample],
    mode: &PromptMode,
    parallelism: usize,
) -> Result<Vec<ProbDist>, ModelError> {
    let workers = parallelism.max(1).min(samples.len().max(1));
    if workers == 1 {
        return samples.iter().map(|s| source.predict(s, mode)).collect();
    }
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<Result<ProbDist, ModelError>>>> = Mutex::new(vec![None; samples.len()]);
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if failed.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= samples.len() {
                    break;
                }
                let result = source.predict(&samples[i], mode);
                if result.is_err() {
                    failed.store(true, Ordering::Relaxed);
                }
                slots.lock().expect("result slots poisoned")[i] = Some(result);
            });
        }
    });
    let slots = slots.into_inner().expect("result slots poisoned");
    let mut out = Vec::with_capacity(samples.len());
    for slot in slots {
        match slot {
            Some(Ok(d)) => out.push(d),
            Some(Err(e)) => return Err(e),
            None => {} // skipped after an earlier failure
        }
    }
    if out.len() != samples.len() {
        return Err(ModelError::Config("batch aborted".into()));
    }
    Ok(out)
}
