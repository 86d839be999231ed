use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::Deserialize;
use serde_json::json;

use crate::cache::{cache_key, RecordCache};
use crate::config::GatewayConfig;
use crate::{CompletionRecord, GatewayError};

/// Token bucket holding at most one token: grants are spaced at least
/// `60 / requests_per_minute` seconds apart, so the sustained rate never
/// exceeds the budget.
struct TokenBucket {
    tokens: f64,
    last_refill: Instant,
    refill_per_sec: f64,
}

impl TokenBucket {
    fn new(requests_per_minute: f64) -> Self {
        TokenBucket {
            tokens: 1.0,
            last_refill: Instant::now(),
            refill_per_sec: requests_per_minute / 60.0,
        }
    }
}

pub struct Gateway {
    config: GatewayConfig,
    cache: RecordCache,
    bucket: Mutex<TokenBucket>,
    http: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: Option<u64>,
    #[serde(default)]
    completion_tokens: Option<u64>,
}

impl Gateway {
    pub fn new(config: GatewayConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let cache = RecordCache::open(&config.cache_dir)?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| GatewayError::BadConfig(e.to_string()))?;
        Ok(Gateway {
            config,
            cache,
            bucket: Mutex::new(TokenBucket::new(0.0)),
            http,
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn cache(&self) -> &RecordCache {
        &self.cache
    }

    /// Block until the rate limiter grants one request.
    fn acquire_slot(&self) {
        loop {
            let wait = {
                let mut bucket = self.bucket.lock().expect("rate limiter lock");
                if bucket.refill_per_sec <= 0.0 {
                    bucket.refill_per_sec = self.config.requests_per_minute / 60.0;
                }
                let now = Instant::now();
                let elapsed = now.duration_since(bucket.last_refill).as_secs_f64();
                bucket.tokens = (bucket.tokens + elapsed * bucket.refill_per_sec).min(1.0);
                bucket.last_refill = now;
                if bucket.tokens >= 1.0 {
                    bucket.tokens -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - bucket.tokens) / bucket.refill_per_sec)
            };
            std::thread::sleep(wait.min(Duration::from_millis(200)));
        }
    }

    /// Complete one prompt: cache first, then the endpoint with rate
    /// limiting and exponential-backoff retries.
    pub fn complete(&self, prompt: &str) -> Result<CompletionRecord, GatewayError> {
        let key = cache_key(&self.config.model, self.config.temperature, prompt);
        if let Some(mut record) = self.cache.get(&key) {
            record.attempts = 0;
            return Ok(record);
        }
        let api_key = std::env::var(&self.config.api_key_env)
            .map_err(|_| GatewayError::MissingCredentials(self.config.api_key_env.clone()))?;

        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        });

        let mut last_error = String::new();
        for attempt in 0..self.config.retry.max_attempts {
            if attempt > 0 {
                std::thread::sleep(self.config.retry.backoff(attempt - 1));
            }
            self.acquire_slot();
            let sent = self
                .http
                .post(&self.config.endpoint)
                .bearer_auth(&api_key)
                .json(&body)
                .send();
            match sent {
                Ok(response) => {
                    let status = response.status();
                    if status.as_u16() == 401 || status.as_u16() == 403 {
                        return Err(GatewayError::AuthRejected(status.as_u16()));
                    }
                    if status.as_u16() == 429 || status.is_server_error() {
                        last_error = format!("status {status}");
                        continue;
                    }
                    let text = response
                        .text()
                        .map_err(|e| GatewayError::BadResponse(e.to_string()))?;
                    if !status.is_success() {
                        return Err(GatewayError::Http {
                            status: status.as_u16(),
                            body: text.chars().take(200).collect(),
                        });
                    }
                    let parsed: ChatResponse = serde_json::from_str(&text)
                        .map_err(|e| GatewayError::BadResponse(e.to_string()))?;
                    let content = parsed
                        .choices
                        .first()
                        .map(|c| c.message.content.clone())
                        .ok_or_else(|| GatewayError::BadResponse("no choices".into()))?;
                    let record = CompletionRecord {
                        prompt: prompt.to_string(),
                        response: content,
                        model: self.config.model.clone(),
                        timestamp: SystemTime::now()
                            .duration_since(UNIX_EPOCH)
                            .map(|d| d.as_secs())
                            .unwrap_or(0),
                        prompt_tokens: parsed.usage.as_ref().and_then(|u| u.prompt_tokens),
                        completion_tokens: parsed
                            .usage
                            .as_ref()
                            .and_then(|u| u.completion_tokens),
                        attempts: attempt + 1,
                    };
                    self.cache.put(&key, &record)?;
                    return Ok(record);
                }
                Err(e) => {
                    last_error = e.to_string();
                    continue;
                }
            }
        }
        Err(GatewayError::Exhausted {
            attempts: self.config.retry.max_attempts,
            last: last_error,
        })
    }

    /// Complete a batch through a bounded worker pool. At most
    /// `max_in_flight` requests run concurrently; results come back in
    /// prompt order.
    pub fn complete_many(
        &self,
        prompts: &[String],
    ) -> Vec<Result<CompletionRecord, GatewayError>> {
        let queue: Mutex<VecDeque<usize>> = Mutex::new((0..prompts.len()).collect());
        let results: Vec<Mutex<Option<Result<CompletionRecord, GatewayError>>>> =
            prompts.iter().map(|_| Mutex::new(None)).collect();
        let workers = self.config.max_in_flight.min(prompts.len().max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let index = {
                        let mut queue = queue.lock().expect("work queue lock");
                        match queue.pop_front() {
                            Some(index) => index,
                            None => break,
                        }
                    };
                    let outcome = self.complete(&prompts[index]);
                    *results[index].lock().expect("result slot lock") = Some(outcome);
                });
            }
        });
        results
            .into_iter()
            .map(|slot| {
                slot.into_inner()
                    .expect("result slot lock")
                    .expect("worker filled every slot")
            })
            .collect()
    }
}
