//! Drive a chat-completion endpoint with slot-tracking prompts.
//!
//! The client enforces a max-in-flight cap and a requests-per-minute token
//! bucket, retries retryable failures with exponential backoff, and caches
//! every completion on disk so repeated runs replay offline. Parsers map
//! raw response text back into slot values and never abort a batch.

mod cache;
mod client;
mod config;
mod parse;

pub use cache::{cache_key, RecordCache};
pub use client::Gateway;
pub use config::{GatewayConfig, RetryPolicy};
pub use parse::{parse_multi_return, parse_single_return, ParsedState, ParsedValue};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One completed request/response pair as persisted in the cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub prompt: String,
    pub response: String,
    pub model: String,
    /// Unix seconds when the response arrived.
    pub timestamp: u64,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    /// How many HTTP attempts the call took (1 = first try). Zero for
    /// cache hits.
    pub attempts: u32,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("no credentials: environment variable `{0}` is not set")]
    MissingCredentials(String),

    #[error("endpoint rejected credentials with status {0}")]
    AuthRejected(u16),

    #[error("request failed after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },

    #[error("endpoint returned status {status}: {body}")]
    Http { status: u16, body: String },

    #[error("malformed completion response: {0}")]
    BadResponse(String),

    #[error("invalid gateway config: {0}")]
    BadConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
