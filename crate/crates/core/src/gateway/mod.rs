//! Prompt dispatch with a content-addressed response cache, retries, rate
//! limiting and bounded concurrency.

mod cache;
mod provider;

use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{self, HttpFailure, RetryPolicy};
use crate::prompting::RenderedPrompt;
use crate::util::{bounded_map, sha256_hex};

pub use cache::{CacheKey, CacheRecord, ResponseCache};
pub use provider::{
    build_provider, Adapter, ChatRequest, HttpProvider, MockFixture, MockProvider, Provider,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("credential variable {0} is not set")]
    AuthMissing(String),
    #[error("provider returned HTTP {status}: {body}")]
    ProviderError { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("undecodable provider response: {0}")]
    Decode(String),
    #[error("response cache: {0}")]
    Cache(String),
    #[error("invalid provider configuration: {0}")]
    InvalidConfig(String),
    #[error("prompt for `{0}` does not match its recorded hash")]
    PromptHashMismatch(String),
}

impl From<HttpFailure> for GatewayError {
    fn from(f: HttpFailure) -> Self {
        match f {
            HttpFailure::Status { status, body, .. } => {
                GatewayError::ProviderError { status, body }
            }
            HttpFailure::Timeout => GatewayError::Timeout,
            HttpFailure::Transport(e) => GatewayError::Transport(e),
            HttpFailure::Decode(e) => GatewayError::Decode(e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    #[serde(rename = "openai")]
    OpenAi,
    Anthropic,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub name: String,
    pub kind: ProviderKind,
    #[serde(default)]
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub credential_env: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
    /// Response script for the mock provider.
    #[serde(default)]
    pub fixture: Option<PathBuf>,
}

fn default_max_in_flight() -> usize {
    4
}

fn default_timeout_ms() -> u64 {
    120_000
}

fn default_max_tokens() -> u32 {
    1024
}

impl ProviderConfig {
    pub fn mock(fixture: impl Into<PathBuf>) -> Self {
        Self {
            name: "mock".into(),
            kind: ProviderKind::Mock,
            endpoint: String::new(),
            model: "mock".into(),
            credential_env: None,
            temperature: 0.0,
            max_in_flight: default_max_in_flight(),
            retry: RetryPolicy::default(),
            timeout_ms: default_timeout_ms(),
            max_tokens: default_max_tokens(),
            requests_per_minute: None,
            fixture: Some(fixture.into()),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_in_flight == 0 {
            return Err(GatewayError::InvalidConfig(
                "max_in_flight must be at least 1".into(),
            ));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidConfig(
                "temperature must be finite and >= 0".into(),
            ));
        }
        if self.kind != ProviderKind::Mock && self.endpoint.is_empty() {
            return Err(GatewayError::InvalidConfig("endpoint is required".into()));
        }
        if self.requests_per_minute == Some(0) {
            return Err(GatewayError::InvalidConfig(
                "requests_per_minute must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub note_id: String,
    pub raw_text: String,
    pub provider: String,
    pub model: String,
    pub latency_ms: u64,
    pub from_cache: bool,
    pub prompt_hash: String,
    /// Requests made for this completion; 0 for a cache hit.
    pub attempts: u32,
}

/// Spaces request starts at least `interval` apart.
#[derive(Debug)]
struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    fn wait(&self) {
        let sleep_for = {
            let mut next = self.next.lock().expect("rate limiter lock");
            let now = Instant::now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + self.interval);
            slot - now
        };
        if !sleep_for.is_zero() {
            std::thread::sleep(sleep_for);
        }
    }
}

pub struct Gateway<P: Provider = Box<dyn Provider>> {
    cfg: ProviderConfig,
    provider: P,
    cache: ResponseCache,
    limiter: Option<RateLimiter>,
}

impl Provider for Box<dyn Provider> {
    fn check_credentials(&self) -> Result<(), GatewayError> {
        (**self).check_credentials()
    }

    fn send(&self, request: &ChatRequest<'_>) -> Result<String, HttpFailure> {
        (**self).send(request)
    }
}

impl Gateway<Box<dyn Provider>> {
    pub fn from_config(cfg: ProviderConfig, cache: ResponseCache) -> Result<Self, GatewayError> {
        let provider = build_provider(&cfg)?;
        Gateway::new(cfg, provider, cache)
    }
}

impl<P: Provider> Gateway<P> {
    pub fn new(
        cfg: ProviderConfig,
        provider: P,
        cache: ResponseCache,
    ) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let limiter = cfg.requests_per_minute.map(|rpm| RateLimiter {
            interval: Duration::from_secs_f64(60.0 / f64::from(rpm)),
            next: Mutex::new(None),
        });
        Ok(Self {
            cfg,
            provider,
            cache,
            limiter,
        })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.cfg
    }

    pub fn provider(&self) -> &P {
        &self.provider
    }

    fn key(&self, prompt: &RenderedPrompt) -> CacheKey {
        CacheKey {
            provider: self.cfg.name.clone(),
            model: self.cfg.model.clone(),
            temperature: self.cfg.temperature,
            prompt_hash: prompt.text_hash.clone(),
        }
    }

    /// Returns the cached completion for `prompt`, or requests one and
    /// caches it.
    pub fn complete(&self, prompt: &RenderedPrompt) -> Result<Completion, GatewayError> {
        if sha256_hex(&prompt.text) != prompt.text_hash {
            return Err(GatewayError::PromptHashMismatch(prompt.note_id.clone()));
        }
        let key = self.key(prompt);
        let completion = |raw_text: String, latency_ms, from_cache, attempts| Completion {
            note_id: prompt.note_id.clone(),
            raw_text,
            provider: self.cfg.name.clone(),
            model: self.cfg.model.clone(),
            latency_ms,
            from_cache,
            prompt_hash: prompt.text_hash.clone(),
            attempts,
        };
        if let Some(hit) = self.cache.get(&key)? {
            return Ok(completion(hit.raw_text, hit.latency_ms, true, 0));
        }

        self.provider.check_credentials()?;
        let request = ChatRequest {
            note_id: &prompt.note_id,
            model: &self.cfg.model,
            temperature: self.cfg.temperature,
            max_tokens: self.cfg.max_tokens,
            prompt: &prompt.text,
        };
        tracing::info!(
            note_id = %prompt.note_id,
            est_prompt_tokens = prompt.text.chars().count().div_ceil(4),
            "dispatching prompt"
        );
        let started = Instant::now();
        let (result, attempts) = http::with_retry(&self.cfg.retry, || {
            if let Some(l) = &self.limiter {
                l.wait();
            }
            self.provider.send(&request)
        });
        let latency_ms = started.elapsed().as_millis() as u64;
        let raw_text = result.map_err(|e| {
            tracing::warn!(note_id = %prompt.note_id, attempts, "request failed: {e}");
            GatewayError::from(e)
        })?;

        let record = CacheRecord {
            key,
            raw_text,
            latency_ms,
            attempts,
        };
        let sidecar = format!(
            "note_id: {}\nstrategy: {}\nprovider: {}\nmodel: {}\n",
            prompt.note_id,
            prompt.strategy.label(),
            self.cfg.name,
            self.cfg.model
        );
        self.cache.put(&record, &sidecar)?;
        Ok(completion(record.raw_text, latency_ms, false, attempts))
    }

    /// Completes every prompt with at most `max_in_flight` requests
    /// outstanding. Failures are reported per item.
    pub fn complete_batch(
        &self,
        prompts: &[RenderedPrompt],
    ) -> Vec<Result<Completion, GatewayError>>
    where
        P: Sync,
    {
        bounded_map(prompts, self.cfg.max_in_flight, |_, p| self.complete(p))
    }
}
