use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use cmbe_core::source::render_prompt;
use cmbe_core::{ModelError, NliSample, ProbDist, ProbSource, PromptMode};
use log::{debug, warn};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use crate::endpoint::{EndpointConfig, RetryPolicy, Strategy};
use crate::parse::{choice_texts, dist_from_answers, dist_from_logprobs};

/// Spaces requests evenly at a fixed rate across all threads.
#[derive(Debug)]
struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    fn new(per_sec: f64) -> RateLimiter {
        RateLimiter {
            interval: Duration::from_secs_f64(1.0 / per_sec),
            next: Mutex::new(Instant::now()),
        }
    }

    fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot - now
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }
}

/// JSON-over-HTTP POST with bearer auth, retries and rate limiting.
#[derive(Debug)]
pub(crate) struct Transport {
    client: Client,
    token: Option<String>,
    retry: RetryPolicy,
    limiter: Option<RateLimiter>,
    requests: AtomicUsize,
}

impl Transport {
    pub(crate) fn new(
        timeout: Duration,
        token_env: &str,
        retry: RetryPolicy,
        rate_limit_per_sec: Option<f64>,
    ) -> Result<Transport, ModelError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ModelError::Config(format!("building HTTP client: {e}")))?;
        let token = std::env::var(token_env).ok().filter(|t| !t.is_empty());
        if token.is_none() {
            warn!("environment variable {token_env} is unset; sending requests without authorization");
        }
        Ok(Transport {
            client,
            token,
            retry,
            limiter: rate_limit_per_sec.map(RateLimiter::new),
            requests: AtomicUsize::new(0),
        })
    }

    /// HTTP requests sent so far, retries included.
    pub(crate) fn requests(&self) -> usize {
        self.requests.load(Ordering::Relaxed)
    }

    pub(crate) fn post_json(&self, url: &str, body: &Value) -> Result<Value, ModelError> {
        let mut last = String::new();
        for attempt in 1..=self.retry.max_attempts {
            if attempt > 1 {
                let delay = self.retry.backoff(attempt - 1);
                debug!("retrying {url} in {delay:?} (attempt {attempt})");
                thread::sleep(delay);
            }
            if let Some(l) = &self.limiter {
                l.acquire();
            }
            self.requests.fetch_add(1, Ordering::Relaxed);
            let mut req = self.client.post(url).json(body);
            if let Some(t) = &self.token {
                req = req.bearer_auth(t);
            }
            let resp = match req.send() {
                Ok(r) => r,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            let status = resp.status();
            let text = match resp.text() {
                Ok(t) => t,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
                last = format!("HTTP {status}: {}", truncate(&text));
                continue;
            }
            if !status.is_success() {
                return Err(ModelError::Http {
                    status: status.as_u16(),
                    body: truncate(&text),
                });
            }
            return serde_json::from_str(&text).map_err(|e| ModelError::Unparseable {
                message: format!("response is not JSON ({e}): {}", truncate(&text)),
            });
        }
        Err(ModelError::Network {
            attempts: self.retry.max_attempts,
            message: last,
        })
    }
}

fn truncate(s: &str) -> String {
    const MAX: usize = 300;
    match s.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}

/// A chat-completions model behind an OpenAI-compatible API.
#[derive(Debug)]
pub struct HttpModel {
    cfg: EndpointConfig,
    transport: Transport,
    unparseable: AtomicUsize,
}

impl HttpModel {
    pub fn new(cfg: EndpointConfig) -> Result<HttpModel, ModelError> {
        cfg.validate()?;
        let transport = Transport::new(
            Duration::from_secs(cfg.timeout_secs),
            &cfg.api_key_env,
            cfg.retry.clone(),
            cfg.rate_limit_per_sec,
        )?;
        Ok(HttpModel {
            cfg,
            transport,
            unparseable: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    /// Responses (or sampled answers) that could not be mapped to a label.
    pub fn unparseable_count(&self) -> usize {
        self.unparseable.load(Ordering::Relaxed)
    }

    pub fn request_count(&self) -> usize {
        self.transport.requests()
    }

    fn request_body(&self, prompt: &str) -> Value {
        let messages = json!([{ "role": "user", "content": prompt }]);
        match self.cfg.strategy {
            Strategy::Logprob => json!({
                "model": self.cfg.model,
                "messages": messages,
                "temperature": 0,
                "max_tokens": 1,
                "logprobs": true,
                "top_logprobs": self.cfg.top_logprobs,
            }),
            Strategy::SampleK => {
                let mut body = json!({
                    "model": self.cfg.model,
                    "messages": messages,
                    "temperature": 1,
                    "n": self.cfg.k,
                    "max_tokens": 5,
                });
                if let Some(seed) = self.cfg.run_seed {
                    body["seed"] = json!(seed);
                }
                body
            }
        }
    }
}

impl ProbSource for HttpModel {
    fn source_id(&self) -> String {
        self.cfg.identity()
    }

    fn predict(&self, sample: &NliSample, mode: &PromptMode) -> Result<ProbDist, ModelError> {
        let body = self.request_body(&render_prompt(sample, mode));
        let resp = self.transport.post_json(&self.cfg.chat_url(), &body)?;
        let result = match self.cfg.strategy {
            Strategy::Logprob => dist_from_logprobs(&resp),
            Strategy::SampleK => choice_texts(&resp).and_then(|texts| {
                let (d, skipped) = dist_from_answers(texts)?;
                if skipped > 0 {
                    self.unparseable.fetch_add(skipped, Ordering::Relaxed);
                    warn!("{}: {skipped} sampled answer(s) named no label", sample.id);
                }
                Ok(d)
            }),
        };
        if let Err(ModelError::Unparseable { message }) = &result {
            self.unparseable.fetch_add(1, Ordering::Relaxed);
            warn!("{}: {message}", sample.id);
        }
        result
    }
}
