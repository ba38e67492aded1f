//! Blocking JSON-over-HTTP client with exponential-backoff retries.
//!
//! Connection failures, 5xx and 429 responses are retried; any other non-2xx
//! status is returned immediately as [`HttpError::Rejected`].

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed response: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_delay_ms: 200, max_delay_ms: 5_000 }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry.saturating_sub(1)).unwrap_or(u64::MAX);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

#[derive(Debug, Clone)]
pub struct JsonClient {
    agent: ureq::Agent,
    url: String,
    token: Option<String>,
    retry: RetryPolicy,
}

enum Attempt<T> {
    Done(T),
    Retry(String),
}

impl JsonClient {
    pub fn new(url: impl Into<String>, token: Option<String>, retry: RetryPolicy, timeout: Duration) -> Self {
        let agent: ureq::Agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        Self { agent, url: url.into(), token, retry }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// POSTs `body` and decodes the JSON response, retrying transient failures.
    pub fn post<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> Result<R, HttpError> {
        let attempts = self.retry.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(self.retry.delay(attempt - 1));
            }
            match self.attempt(body)? {
                Attempt::Done(r) => return Ok(r),
                Attempt::Retry(msg) => {
                    log::debug!("{} attempt {attempt}/{attempts} failed: {msg}", self.url);
                    last = msg;
                }
            }
        }
        Err(HttpError::Transport { attempts, message: last })
    }

    fn attempt<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> Result<Attempt<R>, HttpError> {
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let payload = serde_json::to_vec(body).map_err(|e| HttpError::Protocol(e.to_string()))?;
        let mut resp = match req.send(&payload[..]) {
            Ok(r) => r,
            Err(e) => return Ok(Attempt::Retry(e.to_string())),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Ok(Attempt::Retry(format!("reading body: {e}"))),
        };
        if status == 429 || status >= 500 {
            return Ok(Attempt::Retry(format!("status {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(HttpError::Rejected { status, body: text });
        }
        serde_json::from_str(&text)
            .map(Attempt::Done)
            .map_err(|e| HttpError::Protocol(format!("{e} in `{}`", truncate(&text, 200))))
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}
