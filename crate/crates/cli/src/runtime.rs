//! Builds detectors, prompt mode and the model source from configuration.

use std::sync::Arc;

use anyhow::Context;
use cmbe_core::detect::{Detectors, Lexicons, SimilarityScorer, TokenF1Scorer};
use cmbe_core::oracle::{OracleConfig, SyntheticOracle};
use cmbe_core::{ModelError, NliSample, ProbDist, ProbSource, PromptMode};
use cmbe_model::{CachedSource, EmbeddingScorer, HttpModel, ReplayCache};
use log::info;

use crate::config::{RunConfig, ScorerKind};
use crate::exit::Coded;
use crate::files::{read_json, read_samples};

pub fn detectors(cfg: &RunConfig, lexicons: Option<Lexicons>) -> anyhow::Result<Detectors> {
    let d = &cfg.detectors;
    let lexicons = match (lexicons, &d.lexicon_dir) {
        (Some(l), _) => l,
        (None, Some(dir)) => Lexicons::load_dir(dir).context("loading lexicons")?,
        (None, None) => Lexicons::builtin(),
    };
    let scorer: Arc<dyn SimilarityScorer> = match d.scorer {
        ScorerKind::TokenF1 => Arc::new(TokenF1Scorer),
        ScorerKind::Embedding => Arc::new(EmbeddingScorer::new(d.embedding.clone())?),
    };
    Detectors::new(lexicons, scorer, d.thresholds.clone()).context("configuring detectors")
}

pub fn prompt_mode(cfg: &RunConfig) -> anyhow::Result<PromptMode> {
    match &cfg.prompt.few_shot_pool {
        None => Ok(PromptMode::ZeroShot),
        Some(path) => {
            let pool = read_samples(path)?;
            PromptMode::sample_few_shot(&pool, cfg.prompt.demo_seed)
                .with_context(|| format!("drawing demonstrations from {}", path.display()))
        }
    }
}

pub fn oracle_config(selector: &str) -> anyhow::Result<OracleConfig> {
    let cfg = match selector {
        "five-bias" => OracleConfig::five_bias_default(),
        "polarity-study" => OracleConfig::polarity_study(),
        "unbiased" => OracleConfig::unbiased(0.6),
        path => read_json(path.as_ref()).with_context(|| format!("oracle `{path}` is neither a preset nor a readable oracle file"))?,
    };
    cfg.validate().map_err(|e| Coded::io(format!("oracle `{selector}`: {e}")))?;
    Ok(cfg)
}

enum Backend {
    Oracle(SyntheticOracle),
    Http(HttpModel),
}

impl ProbSource for Backend {
    fn source_id(&self) -> String {
        match self {
            Backend::Oracle(o) => o.source_id(),
            Backend::Http(h) => h.source_id(),
        }
    }

    fn predict(&self, sample: &NliSample, mode: &PromptMode) -> Result<ProbDist, ModelError> {
        match self {
            Backend::Oracle(o) => o.predict(sample, mode),
            Backend::Http(h) => h.predict(sample, mode),
        }
    }
}

/// Runs `body` with the configured source, wrapped in the replay cache
/// when one is set. Offline runs never construct a network client.
pub fn with_source<R>(
    cfg: &RunConfig,
    body: impl FnOnce(&dyn ProbSource, usize) -> anyhow::Result<R>,
) -> anyhow::Result<R> {
    let oracle = cfg.source.oracle.as_deref().map(oracle_config).transpose()?;
    let parallelism = cfg.parallelism.unwrap_or(cfg.source.endpoint.max_parallel).max(1);
    if oracle.is_none() {
        cfg.source.endpoint.validate()?;
    }
    let offline_id = || -> anyhow::Result<String> {
        Ok(match &oracle {
            Some(o) => SyntheticOracle::new(o.clone())?.source_id(),
            None => cfg.source.endpoint.identity(),
        })
    };
    let backend = || -> anyhow::Result<Backend> {
        Ok(match &oracle {
            Some(o) => Backend::Oracle(SyntheticOracle::new(o.clone())?),
            None => Backend::Http(HttpModel::new(cfg.source.endpoint.clone())?),
        })
    };
    match &cfg.cache {
        None if cfg.offline => Err(Coded::io("offline mode needs a replay cache (--cache)").into()),
        None => body(&backend()?, parallelism),
        Some(path) => {
            let cache = ReplayCache::open(path).context("opening replay cache")?;
            let source = if cfg.offline {
                CachedSource::offline(offline_id()?, &cache)
            } else {
                CachedSource::online(backend()?, &cache)
            };
            let result = body(&source, parallelism);
            info!("replay cache {}: {} hit(s), {} miss(es)", path.display(), source.hits(), source.misses());
            cache.flush().context("flushing replay cache")?;
            result
        }
    }
}
