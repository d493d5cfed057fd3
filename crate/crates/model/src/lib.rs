//! Model access for cmbe: chat-completion clients that yield label
//! distributions, an embedding-based similarity scorer and a replay cache.

pub mod cache;
pub mod embed;
pub mod endpoint;
mod http;
pub mod parse;

pub use cache::{CachedSource, ReplayCache};
pub use embed::{EmbeddingConfig, EmbeddingScorer};
pub use endpoint::{cache_key, key_for, EndpointConfig, RetryPolicy, Strategy};
pub use http::HttpModel;
