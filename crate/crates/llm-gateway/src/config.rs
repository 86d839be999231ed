use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::GatewayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// First-retry delay; doubles per attempt.
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            backoff_base_ms: 500,
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.backoff_base_ms.saturating_mul(1u64 << attempt.min(16)))
    }
}

/// Endpoint, budgets, retry policy, cache location, and the name of the
/// environment variable holding the API key. The key itself is never
/// stored, logged, or written into cache records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub endpoint: String,
    pub model: String,
    pub max_in_flight: usize,
    pub requests_per_minute: f64,
    pub retry: RetryPolicy,
    pub cache_dir: PathBuf,
    pub api_key_env: String,
    pub temperature: f64,
}

impl GatewayConfig {
    pub fn new(endpoint: impl Into<String>, cache_dir: impl Into<PathBuf>) -> Self {
        GatewayConfig {
            endpoint: endpoint.into(),
            model: "gpt-3.5-turbo".into(),
            max_in_flight: 4,
            requests_per_minute: 60.0,
            retry: RetryPolicy::default(),
            cache_dir: cache_dir.into(),
            api_key_env: "LDST_API_KEY".into(),
            temperature: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_in_flight == 0 {
            return Err(GatewayError::BadConfig("max_in_flight must be > 0".into()));
        }
        if !(self.requests_per_minute > 0.0) {
            return Err(GatewayError::BadConfig(
                "requests_per_minute must be > 0".into(),
            ));
        }
        if self.retry.max_attempts == 0 {
            return Err(GatewayError::BadConfig("max_attempts must be > 0".into()));
        }
        Ok(())
    }
}
