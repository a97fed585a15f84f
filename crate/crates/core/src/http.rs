//! Blocking JSON-over-HTTP with bounded exponential backoff, shared by the
//! chat, embedding and scorer clients.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_backoff_ms: 500,
            max_backoff_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based count of failures so far).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << attempt.saturating_sub(1).min(20);
        Duration::from_millis(
            self.base_backoff_ms
                .saturating_mul(factor)
                .min(self.max_backoff_ms),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HttpFailure {
    /// Non-success status; `retryable` for 408, 429 and 5xx.
    Status {
        status: u16,
        body: String,
        retryable: bool,
    },
    Timeout,
    /// Connection-level failure, treated as transient.
    Transport(String),
    /// Success status but the body is not JSON.
    Decode(String),
}

impl HttpFailure {
    pub fn is_retryable(&self) -> bool {
        match self {
            HttpFailure::Status { retryable, .. } => *retryable,
            HttpFailure::Timeout | HttpFailure::Transport(_) => true,
            HttpFailure::Decode(_) => false,
        }
    }
}

impl std::fmt::Display for HttpFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HttpFailure::Status { status, body, .. } => write!(f, "HTTP {status}: {body}"),
            HttpFailure::Timeout => f.write_str("request timed out"),
            HttpFailure::Transport(e) => write!(f, "transport error: {e}"),
            HttpFailure::Decode(e) => write!(f, "undecodable response: {e}"),
        }
    }
}

pub fn status_is_retryable(status: u16) -> bool {
    status == 408 || status == 429 || (500..600).contains(&status)
}

pub fn client(timeout: Duration) -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .expect("http client builds")
}

/// One request, no retries.
pub fn send_json(
    client: &reqwest::blocking::Client,
    method: reqwest::Method,
    url: &str,
    headers: &[(String, String)],
    body: Option<&Value>,
) -> Result<Value, HttpFailure> {
    let mut req = client.request(method, url);
    for (k, v) in headers {
        req = req.header(k.as_str(), v.as_str());
    }
    if let Some(body) = body {
        req = req.json(body);
    }
    let resp = req.send().map_err(|e| {
        if e.is_timeout() {
            HttpFailure::Timeout
        } else {
            HttpFailure::Transport(e.to_string())
        }
    })?;
    let status = resp.status().as_u16();
    let text = resp.text().map_err(|e| {
        if e.is_timeout() {
            HttpFailure::Timeout
        } else {
            HttpFailure::Transport(e.to_string())
        }
    })?;
    if !(200..300).contains(&status) {
        return Err(HttpFailure::Status {
            status,
            body: text,
            retryable: status_is_retryable(status),
        });
    }
    serde_json::from_str(&text).map_err(|e| HttpFailure::Decode(e.to_string()))
}

/// Runs `op` until it succeeds, fails permanently, or `max_attempts` is
/// reached. Returns the outcome and the number of attempts made.
pub fn with_retry<T>(
    policy: &RetryPolicy,
    mut op: impl FnMut() -> Result<T, HttpFailure>,
) -> (Result<T, HttpFailure>, u32) {
    let max = policy.max_attempts.max(1);
    let mut attempt = 0;
    loop {
        attempt += 1;
        match op() {
            Ok(v) => return (Ok(v), attempt),
            Err(e) if e.is_retryable() && attempt < max => {
                tracing::debug!("attempt {attempt} failed ({e}); backing off");
                std::thread::sleep(policy.backoff(attempt));
            }
            Err(e) => return (Err(e), attempt),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            max_attempts: 5,
            base_backoff_ms: 100,
            max_backoff_ms: 350,
        };
        assert_eq!(p.backoff(1), Duration::from_millis(100));
        assert_eq!(p.backoff(2), Duration::from_millis(200));
        assert_eq!(p.backoff(3), Duration::from_millis(350));
    }

    #[test]
    fn retries_only_transient_failures() {
        let p = RetryPolicy {
            max_attempts: 4,
            base_backoff_ms: 0,
            max_backoff_ms: 0,
        };
        let mut calls = 0;
        let (r, n) = with_retry(&p, || {
            calls += 1;
            if calls < 3 {
                Err(HttpFailure::Status {
                    status: 429,
                    body: String::new(),
                    retryable: true,
                })
            } else {
                Ok(calls)
            }
        });
        assert_eq!((r, n), (Ok(3), 3));

        let (r, n) = with_retry(&p, || -> Result<(), _> {
            Err(HttpFailure::Status {
                status: 401,
                body: "no".into(),
                retryable: false,
            })
        });
        assert!(r.is_err());
        assert_eq!(n, 1);

        let (r, n) = with_retry(&p, || -> Result<(), _> { Err(HttpFailure::Timeout) });
        assert_eq!(r, Err(HttpFailure::Timeout));
        assert_eq!(n, 4);
    }
}
