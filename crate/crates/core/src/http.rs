//! Blocking JSON-over-HTTP with bounded exponential backoff, shared by the
//! embedding, LLM and external scorer clients.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::warn;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    /// Total attempts including the first one.
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub timeout_secs: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
            timeout_secs: 120,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u64 << (retry.saturating_sub(1)).min(20);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

pub(crate) struct JsonClient {
    agent: ureq::Agent,
    policy: RetryPolicy,
    bearer: Option<String>,
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

impl JsonClient {
    pub(crate) fn new(policy: RetryPolicy, bearer: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(policy.timeout_secs.max(1))))
            .build()
            .into();
        Self { agent, policy, bearer }
    }

    /// POSTs `body` and decodes a JSON response, retrying HTTP 429, 5xx and
    /// transport failures.
    pub(crate) fn post(&self, url: &str, body: &Value) -> Result<Value> {
        let attempts = self.policy.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.post_once(url, body) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(msg)) => return Err(Error::remote(format!("{url}: {msg}"))),
                Err(Attempt::Retry(msg)) => {
                    if attempt < attempts {
                        let delay = self.policy.delay(attempt);
                        warn!(%url, attempt, ?delay, "transient failure: {msg}");
                        thread::sleep(delay);
                    }
                    last = msg;
                }
            }
        }
        Err(Error::remote(format!("{url}: giving up after {attempts} attempts: {last}")))
    }

    fn post_once(&self, url: &str, body: &Value) -> std::result::Result<Value, Attempt> {
        let mut req = self.agent.post(url);
        if let Some(token) = &self.bearer {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        match req.send_json(body) {
            Ok(mut resp) => resp
                .body_mut()
                .read_json::<Value>()
                .map_err(|e| Attempt::Fatal(format!("invalid JSON response: {e}"))),
            Err(ureq::Error::StatusCode(code)) if code == 429 || code >= 500 => {
                Err(Attempt::Retry(format!("HTTP {code}")))
            }
            Err(ureq::Error::StatusCode(code)) => Err(Attempt::Fatal(format!("HTTP {code}"))),
            Err(
                e @ (ureq::Error::Io(_)
                | ureq::Error::Timeout(_)
                | ureq::Error::ConnectionFailed
                | ureq::Error::HostNotFound
                | ureq::Error::Protocol(_)),
            ) => Err(Attempt::Retry(e.to_string())),
            Err(e) => Err(Attempt::Fatal(e.to_string())),
        }
    }
}
