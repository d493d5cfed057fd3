use std::time::Duration;

use cmbe_core::source::{render_prompt, sha256_hex};
use cmbe_core::{ModelError, NliSample, PromptMode};
use serde::{Deserialize, Serialize};

/// How a label distribution is read off the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Softmax over the first answer token's label log-probabilities.
    Logprob,
    /// Empirical label frequencies over `k` sampled answers, add-one smoothed.
    SampleK,
}

impl Strategy {
    pub fn id(self) -> &'static str {
        match self {
            Strategy::Logprob => "logprob",
            Strategy::SampleK => "sample-k",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            initial_backoff_ms: 500,
            max_backoff_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based), doubling each time.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << attempt.saturating_sub(1).min(20);
        Duration::from_millis(self.initial_backoff_ms.saturating_mul(factor).min(self.max_backoff_ms))
    }
}

/// An OpenAI-compatible chat-completions endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// Base URL up to and including the API version, e.g. `http://host/v1`.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token. The token
    /// itself never appears in configuration.
    pub api_key_env: String,
    pub strategy: Strategy,
    pub k: u32,
    /// Passed through as the request seed for sample-k runs and mixed into
    /// the cache key so repeated runs stay distinct.
    pub run_seed: Option<u64>,
    pub top_logprobs: u32,
    pub timeout_secs: u64,
    pub max_parallel: usize,
    /// Requests per second across all workers; `None` means unlimited.
    pub rate_limit_per_sec: Option<f64>,
    pub retry: RetryPolicy,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://localhost:8000/v1".into(),
            model: String::new(),
            api_key_env: "OPENAI_API_KEY".into(),
            strategy: Strategy::Logprob,
            k: 9,
            run_seed: None,
            top_logprobs: 20,
            timeout_secs: 60,
            max_parallel: 4,
            rate_limit_per_sec: None,
            retry: RetryPolicy::default(),
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.model.trim().is_empty() {
            return bad("model name is empty".into());
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return bad(format!("base URL `{}` must start with http:// or https://", self.base_url));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.max_parallel == 0 {
            return bad("max_parallel must be at least 1".into());
        }
        if self.retry.max_attempts == 0 {
            return bad("retry.max_attempts must be at least 1".into());
        }
        if let Some(r) = self.rate_limit_per_sec {
            if !(r.is_finite() && r > 0.0) {
                return bad(format!("rate limit {r} must be positive"));
            }
        }
        Ok(())
    }

    /// Everything about the endpoint that changes what a prediction means.
    pub fn identity(&self) -> String {
        match self.strategy {
            Strategy::Logprob => format!("{}|logprob", self.model),
            Strategy::SampleK => match self.run_seed {
                Some(seed) => format!("{}|sample-k|k={}|seed={seed}", self.model, self.k),
                None => format!("{}|sample-k|k={}", self.model, self.k),
            },
        }
    }

    pub fn chat_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

/// Content hash of the source identity and the exact prompt text.
pub fn key_for(source_id: &str, prompt: &str) -> String {
    sha256_hex(format!("{source_id}\n{prompt}"))
}

/// Replay-cache key for one request against `endpoint`.
pub fn cache_key(sample: &NliSample, mode: &PromptMode, endpoint: &EndpointConfig) -> String {
    key_for(&endpoint.identity(), &render_prompt(sample, mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use cmbe_core::Label;

    fn endpoint() -> EndpointConfig {
        EndpointConfig {
            model: "m1".into(),
            ..Default::default()
        }
    }

    #[test]
    fn keys() {
        let s = NliSample::new("a", "A man sleeps.", "A person rests.").unwrap();
        let e = endpoint();
        assert_eq!(cache_key(&s, &PromptMode::ZeroShot, &e), cache_key(&s.clone(), &PromptMode::ZeroShot, &e));

        let demos = PromptMode::sample_few_shot(
            &Label::ALL.map(|l| NliSample::new(l.as_str(), "p", "h").unwrap().with_gold(l)),
            0,
        )
        .unwrap();
        assert_ne!(cache_key(&s, &PromptMode::ZeroShot, &e), cache_key(&s, &demos, &e));

        let other = EndpointConfig { model: "m2".into(), ..endpoint() };
        assert_ne!(cache_key(&s, &PromptMode::ZeroShot, &e), cache_key(&s, &PromptMode::ZeroShot, &other));

        let sampled = EndpointConfig { strategy: Strategy::SampleK, ..endpoint() };
        let k5 = EndpointConfig { k: 5, ..sampled.clone() };
        assert_ne!(cache_key(&s, &PromptMode::ZeroShot, &sampled), cache_key(&s, &PromptMode::ZeroShot, &k5));
        let seeded = EndpointConfig { run_seed: Some(2), ..sampled.clone() };
        assert_ne!(cache_key(&s, &PromptMode::ZeroShot, &sampled), cache_key(&s, &PromptMode::ZeroShot, &seeded));
    }

    #[test]
    fn validation() {
        assert!(endpoint().validate().is_ok());
        assert!(EndpointConfig::default().validate().is_err());
        assert!(EndpointConfig { k: 0, ..endpoint() }.validate().is_err());
        assert!(EndpointConfig { max_parallel: 0, ..endpoint() }.validate().is_err());
        assert!(EndpointConfig { base_url: "ftp://x".into(), ..endpoint() }.validate().is_err());
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy { max_attempts: 5, initial_backoff_ms: 100, max_backoff_ms: 350 };
        assert_eq!(p.backoff(1), Duration::from_millis(100));
        assert_eq!(p.backoff(2), Duration::from_millis(200));
        assert_eq!(p.backoff(3), Duration::from_millis(350));
    }
}
