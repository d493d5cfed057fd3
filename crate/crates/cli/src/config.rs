//! Experiment manifest: one TOML file, every field optional, flags win.

use std::path::{Path, PathBuf};

use anyhow::Context;
use cmbe_core::detect::DetectorConfig;
use cmbe_core::source::sha256_hex;
use cmbe_model::{EmbeddingConfig, EndpointConfig};
use serde::{Deserialize, Serialize};

use crate::exit::Coded;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub log_level: Option<String>,
    /// Replay cache file shared by every model-backed subcommand.
    pub cache: Option<PathBuf>,
    /// Answer only from the cache; a miss is an error.
    pub offline: bool,
    /// Concurrent model calls; defaults to the endpoint's `max_parallel`.
    pub parallelism: Option<usize>,
    pub source: SourceConfig,
    pub prompt: PromptConfig,
    pub detectors: DetectorSection,
    pub generate: GenerateSection,
    pub probe: ProbeSection,
    pub calibrate: CalibrateSection,
    pub debias: DebiasSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    /// Synthetic oracle instead of a live endpoint: `five-bias`,
    /// `polarity-study`, `unbiased` or a path to an oracle JSON file.
    pub oracle: Option<String>,
    pub endpoint: EndpointConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    /// Labeled JSONL pool to draw one demonstration per label from; absent
    /// means zero-shot.
    pub few_shot_pool: Option<PathBuf>,
    pub demo_seed: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    /// Token-F1 proxy; needs no network.
    #[default]
    TokenF1,
    Embedding,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub scorer: ScorerKind,
    /// Directory with the six word-list files; built-in lists otherwise.
    pub lexicon_dir: Option<PathBuf>,
    pub thresholds: DetectorConfig,
    pub embedding: EmbeddingConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PoolKind {
    /// Every benchmark feature alone plus the multi-feature combinations
    /// calibration needs.
    Calibration,
    /// Each of the nine features alone.
    Probe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub seed: u64,
    pub total: usize,
    /// Directory with the word lists and `verb_phrase_pairs.tsv`; built-in
    /// vocabulary otherwise.
    pub vocab_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Emit a pre-annotated synthetic pool for oracle runs instead of the
    /// benchmark.
    pub oracle_pool: Option<PoolKind>,
    pub per_label: Option<usize>,
    pub max_attempts: Option<usize>,
}

impl Default for GenerateSection {
    fn default() -> Self {
        GenerateSection {
            seed: 42,
            total: 12_000,
            vocab_dir: None,
            out: None,
            oracle_pool: None,
            per_label: None,
            max_attempts: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub pool: Option<PathBuf>,
    /// A feature id, a comma-separated list, or `all`.
    pub feature: Option<String>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateSection {
    pub pool: Option<PathBuf>,
    /// Comma-separated bias type ids.
    pub known: String,
    /// Draw this many types at random from `known` instead of using all.
    pub random_known: Option<usize>,
    /// Number of random subsets to draw; one profile each.
    pub draws: usize,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub ridge: f64,
    pub rank_tolerance: f64,
    pub out: Option<PathBuf>,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        CalibrateSection {
            pool: None,
            known: "overlap,length,semsim,speculative".into(),
            random_known: None,
            draws: 2,
            n: 15,
            m: 90,
            seed: 0,
            ridge: 0.0,
            rank_tolerance: 1e-10,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DebiasSection {
    pub dataset: Option<PathBuf>,
    pub profile: Option<PathBuf>,
    /// Raw argmax; no profile needed.
    pub vanilla: bool,
    pub method: Option<String>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub dataset: Option<PathBuf>,
    pub predictions: Vec<PathBuf>,
    pub method: Option<String>,
    pub compare: bool,
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Coded::io(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| Coded::io(format!("invalid config {}: {e}", path.display())))
            .context("loading configuration")
    }

    /// Content hash of the effective configuration after flag overrides.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_vec(self).expect("config serializes"))
    }
}

/// Returns the value or a config error naming the missing setting.
pub fn required<'a, T>(value: &'a Option<T>, what: &str) -> anyhow::Result<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| Coded::io(format!("missing required setting: {what}")).into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_manifest_is_defaults() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.calibrate.n, 15);
        assert_eq!(cfg.calibrate.m, 90);
        assert_eq!(cfg.generate.total, 12_000);
    }

    #[test]
    fn nested_sections_parse() {
        let cfg: RunConfig = toml::from_str(
            r#"
            cache = "c.jsonl"
            [source.endpoint]
            model = "m"
            strategy = "sample-k"
            k = 5
            [source.endpoint.retry]
            max_attempts = 2
            [calibrate]
            known = "overlap"
            [detectors.thresholds]
            length_gap_words = 6
            "#,
        )
        .unwrap();
        assert_eq!(cfg.source.endpoint.k, 5);
        assert_eq!(cfg.source.endpoint.retry.max_attempts, 2);
        assert_eq!(cfg.calibrate.known, "overlap");
        assert_eq!(cfg.calibrate.m, 90);
        assert_eq!(cfg.detectors.thresholds.length_gap_words, 6);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("typo = 1").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.generate.seed = 7;
        assert_ne!(a.hash(), b.hash());
    }
}
