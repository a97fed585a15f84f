use std::collections::{HashMap, HashSet, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{GatewayError, ProviderConfig, ProviderKind};
use crate::http::{self, HttpFailure};

pub struct ChatRequest<'a> {
    pub note_id: &'a str,
    pub model: &'a str,
    pub temperature: f64,
    pub max_tokens: u32,
    pub prompt: &'a str,
}

/// One chat-completion backend: a single user message in, the first text
/// choice out. Retries are the caller's job.
pub trait Provider: Send + Sync {
    /// Fails when a required credential is not available.
    fn check_credentials(&self) -> Result<(), GatewayError> {
        Ok(())
    }

    fn send(&self, request: &ChatRequest<'_>) -> Result<String, HttpFailure>;
}

pub fn build_provider(cfg: &ProviderConfig) -> Result<Box<dyn Provider>, GatewayError> {
    let timeout = Duration::from_millis(cfg.timeout_ms);
    Ok(match cfg.kind {
        ProviderKind::OpenAi => Box::new(HttpProvider::new(Adapter::OpenAi, cfg, timeout)),
        ProviderKind::Anthropic => Box::new(HttpProvider::new(Adapter::Anthropic, cfg, timeout)),
        ProviderKind::Mock => {
            let path = cfg.fixture.as_deref().ok_or_else(|| {
                GatewayError::InvalidConfig("mock provider needs `fixture`".into())
            })?;
            Box::new(MockProvider::from_file(path)?)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Adapter {
    OpenAi,
    Anthropic,
}

pub struct HttpProvider {
    adapter: Adapter,
    endpoint: String,
    credential_env: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpProvider {
    pub fn new(adapter: Adapter, cfg: &ProviderConfig, timeout: Duration) -> Self {
        Self {
            adapter,
            endpoint: cfg.endpoint.clone(),
            credential_env: cfg.credential_env.clone(),
            client: http::client(timeout),
        }
    }

    fn credential(&self) -> Option<String> {
        self.credential_env
            .as_ref()
            .and_then(|v| std::env::var(v).ok())
    }

    fn request(&self, r: &ChatRequest<'_>) -> (Vec<(String, String)>, Value) {
        let mut headers = Vec::new();
        let key = self.credential();
        let messages = json!([{ "role": "user", "content": r.prompt }]);
        match self.adapter {
            Adapter::OpenAi => {
                if let Some(k) = key {
                    headers.push(("Authorization".into(), format!("Bearer {k}")));
                }
                let body = json!({
                    "model": r.model,
                    "temperature": r.temperature,
                    "max_tokens": r.max_tokens,
                    "messages": messages,
                });
                (headers, body)
            }
            Adapter::Anthropic => {
                if let Some(k) = key {
                    headers.push(("x-api-key".into(), k));
                }
                headers.push(("anthropic-version".into(), "2023-06-01".into()));
                let body = json!({
                    "model": r.model,
                    "temperature": r.temperature,
                    "max_tokens": r.max_tokens,
                    "messages": messages,
                });
                (headers, body)
            }
        }
    }

    fn extract(&self, body: &Value) -> Result<String, HttpFailure> {
        let text = match self.adapter {
            Adapter::OpenAi => body["choices"][0]["message"]["content"].as_str(),
            Adapter::Anthropic => body["content"]
                .as_array()
                .and_then(|blocks| blocks.iter().find(|b| b["type"] == "text"))
                .and_then(|b| b["text"].as_str()),
        };
        text.map(str::to_string)
            .ok_or_else(|| HttpFailure::Decode("response has no text choice".into()))
    }
}

impl Provider for HttpProvider {
    fn check_credentials(&self) -> Result<(), GatewayError> {
        match &self.credential_env {
            Some(var) if self.credential().is_none() => Err(GatewayError::AuthMissing(var.clone())),
            _ => Ok(()),
        }
    }

    fn send(&self, request: &ChatRequest<'_>) -> Result<String, HttpFailure> {
        let (headers, body) = self.request(request);
        let resp = http::send_json(
            &self.client,
            reqwest::Method::POST,
            &self.endpoint,
            &headers,
            Some(&body),
        )?;
        self.extract(&resp)
    }
}

/// Fixture file for [`MockProvider`].
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct MockFixture {
    /// note id -> completion text
    pub responses: HashMap<String, String>,
    /// Returned for note ids without an entry; absent means HTTP 404.
    pub default: Option<String>,
    /// note id -> statuses to fail with before succeeding
    pub faults: HashMap<String, Vec<u16>>,
    /// note ids that always fail with HTTP 500
    pub poisoned: Vec<String>,
    pub delay_ms: u64,
}

/// Scripted, instrumented provider for offline runs and tests.
#[derive(Debug, Default)]
pub struct MockProvider {
    responses: HashMap<String, String>,
    default: Option<String>,
    faults: Mutex<HashMap<String, VecDeque<u16>>>,
    poisoned: HashSet<String>,
    delay: Duration,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

impl MockProvider {
    pub fn new(fixture: MockFixture) -> Self {
        Self {
            responses: fixture.responses,
            default: fixture.default,
            faults: Mutex::new(
                fixture
                    .faults
                    .into_iter()
                    .map(|(k, v)| (k, v.into_iter().collect()))
                    .collect(),
            ),
            poisoned: fixture.poisoned.into_iter().collect(),
            delay: Duration::from_millis(fixture.delay_ms),
            ..Self::default()
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::InvalidConfig(format!("{}: {e}", path.display())))?;
        let fixture: MockFixture = serde_json::from_str(&text)
            .map_err(|e| GatewayError::InvalidConfig(format!("{}: {e}", path.display())))?;
        Ok(Self::new(fixture))
    }

    /// Requests received, including failed ones.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }

    fn respond(&self, note_id: &str) -> Result<String, HttpFailure> {
        let fail = |status: u16| HttpFailure::Status {
            status,
            body: format!("scripted failure for {note_id}"),
            retryable: http::status_is_retryable(status),
        };
        if self.poisoned.contains(note_id) {
            return Err(fail(500));
        }
        let scripted = self
            .faults
            .lock()
            .expect("fault script lock")
            .get_mut(note_id)
            .and_then(VecDeque::pop_front);
        if let Some(status) = scripted {
            return Err(fail(status));
        }
        self.responses
            .get(note_id)
            .or(self.default.as_ref())
            .cloned()
            .ok_or_else(|| fail(404))
    }
}

impl Provider for MockProvider {
    fn send(&self, request: &ChatRequest<'_>) -> Result<String, HttpFailure> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        let out = self.respond(request.note_id);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        out
    }
}

impl<P: Provider + ?Sized> Provider for std::sync::Arc<P> {
    fn check_credentials(&self) -> Result<(), GatewayError> {
        (**self).check_credentials()
    }

    fn send(&self, request: &ChatRequest<'_>) -> Result<String, HttpFailure> {
        (**self).send(request)
    }
}
