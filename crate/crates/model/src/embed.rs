//! Sentence similarity from an external embedding service.

use std::time::Duration;

use cmbe_core::detect::{ScorerError, SimilarityScorer};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::endpoint::RetryPolicy;
use crate::http::Transport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    /// Full URL of the embedding endpoint.
    pub url: String,
    /// Scorer id; detector thresholds are looked up under this name.
    pub id: String,
    /// Whether scores live on the BERTScore scale, so the default semantic
    /// similarity thresholds apply.
    pub bertscore_compatible: bool,
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            url: "http://localhost:8001/embed".into(),
            id: "embedding".into(),
            bertscore_compatible: false,
            api_key_env: "EMBEDDING_API_KEY".into(),
            timeout_secs: 30,
            retry: RetryPolicy::default(),
        }
    }
}

/// Posts `{"texts": [premise, hypothesis]}` and expects
/// `{"embeddings": [[...], [...]]}`. The score is cosine similarity mapped
/// from [-1, 1] to [0, 1].
#[derive(Debug)]
pub struct EmbeddingScorer {
    cfg: EmbeddingConfig,
    transport: Transport,
}

impl EmbeddingScorer {
    pub fn new(cfg: EmbeddingConfig) -> Result<EmbeddingScorer, cmbe_core::ModelError> {
        let transport = Transport::new(Duration::from_secs(cfg.timeout_secs), &cfg.api_key_env, cfg.retry.clone(), None)?;
        Ok(EmbeddingScorer { cfg, transport })
    }
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

pub fn cosine01(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.is_empty() {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(((dot / (na * nb)).clamp(-1.0, 1.0) + 1.0) / 2.0)
}

impl SimilarityScorer for EmbeddingScorer {
    fn scorer_id(&self) -> &str {
        &self.cfg.id
    }

    fn bertscore_compatible(&self) -> bool {
        self.cfg.bertscore_compatible
    }

    fn score(&self, premise: &str, hypothesis: &str) -> Result<f64, ScorerError> {
        let fail = |message: String| ScorerError::Failed {
            scorer: self.cfg.id.clone(),
            message,
        };
        let resp = self
            .transport
            .post_json(&self.cfg.url, &json!({ "texts": [premise, hypothesis] }))
            .map_err(|e| fail(e.to_string()))?;
        let parsed: EmbedResponse =
            serde_json::from_value(resp).map_err(|e| fail(format!("bad embedding response: {e}")))?;
        match parsed.embeddings.as_slice() {
            [a, b] => cosine01(a, b).ok_or_else(|| fail("embeddings are empty, zero or mismatched".into())),
            other => Err(fail(format!("expected 2 embeddings, got {}", other.len()))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_mapping() {
        assert_eq!(cosine01(&[1.0, 0.0], &[2.0, 0.0]), Some(1.0));
        assert_eq!(cosine01(&[1.0, 0.0], &[-1.0, 0.0]), Some(0.0));
        assert_eq!(cosine01(&[1.0, 0.0], &[0.0, 3.0]), Some(0.5));
        assert_eq!(cosine01(&[0.0], &[1.0]), None);
        assert_eq!(cosine01(&[1.0], &[1.0, 2.0]), None);
    }
}
