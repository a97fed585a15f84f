use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{EmbeddingVector, RetrievalError};
use crate::http::{self, RetryPolicy};
use crate::scalar::Scalar;
use crate::text::Tokenizer;

pub trait Embedder<T: Scalar>: Send + Sync {
    /// Identity recorded in index headers; changes whenever vectors would.
    fn backend_id(&self) -> String;

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector<T>>, RetrievalError>;
}

/// Embeds `texts`, checking that the backend returned one vector per input
/// with a single dimension.
pub fn embed<T: Scalar>(
    texts: &[String],
    backend: &dyn Embedder<T>,
) -> Result<Vec<EmbeddingVector<T>>, RetrievalError> {
    let vectors = backend.embed(texts)?;
    if vectors.len() != texts.len() {
        return Err(RetrievalError::BackendUnavailable(format!(
            "backend returned {} vectors for {} inputs",
            vectors.len(),
            texts.len()
        )));
    }
    if let Some(first) = vectors.first() {
        let dim = first.dim();
        if let Some(bad) = vectors.iter().find(|v| v.dim() != dim) {
            return Err(RetrievalError::DimensionMismatch {
                expected: dim,
                got: bad.dim(),
            });
        }
    }
    Ok(vectors)
}

/// Offline embedder: L2-normalized bag of unigrams, feature-hashed into
/// `dim` buckets with 64-bit FNV-1a.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    pub dim: usize,
    pub tokenizer: Tokenizer,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self {
            dim: 512,
            tokenizer: Tokenizer::default(),
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl HashingEmbedder {
    pub fn with_dim(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn vector<T: Scalar>(&self, text: &str) -> EmbeddingVector<T> {
        let mut counts = vec![0.0f64; self.dim.max(1)];
        for token in self.tokenizer.tokenize(text) {
            let bucket = (fnv1a(token.as_bytes()) % counts.len() as u64) as usize;
            counts[bucket] += 1.0;
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 0.0 {
            for c in &mut counts {
                *c /= norm;
            }
        }
        EmbeddingVector::new(counts.into_iter().map(T::from_f64_lossy).collect())
            .expect("hashed counts are finite")
    }
}

impl<T: Scalar> Embedder<T> for HashingEmbedder {
    fn backend_id(&self) -> String {
        format!(
            "hashing-fnv1a-unigram/dim={}/lower={}/decimals={}",
            self.dim, self.tokenizer.lowercase, self.tokenizer.keep_decimals
        )
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector<T>>, RetrievalError> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

/// Client for an OpenAI-compatible `/embeddings` endpoint.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    pub endpoint: String,
    pub model: String,
    pub credential_env: Option<String>,
    pub retry: RetryPolicy,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        credential_env: Option<String>,
        retry: RetryPolicy,
        timeout: Duration,
    ) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            credential_env,
            retry,
            client: http::client(timeout),
        }
    }

    fn headers(&self) -> Result<Vec<(String, String)>, RetrievalError> {
        let mut headers = Vec::new();
        if let Some(var) = &self.credential_env {
            let key = std::env::var(var).map_err(|_| {
                RetrievalError::BackendUnavailable(format!("credential variable {var} is not set"))
            })?;
            headers.push(("Authorization".into(), format!("Bearer {key}")));
        }
        Ok(headers)
    }

    fn parse<T: Scalar>(body: &Value, n: usize) -> Result<Vec<EmbeddingVector<T>>, RetrievalError> {
        let bad = |m: &str| RetrievalError::BackendUnavailable(format!("malformed response: {m}"));
        let data = body["data"]
            .as_array()
            .ok_or_else(|| bad("missing `data`"))?;
        let mut slots: Vec<Option<EmbeddingVector<T>>> = vec![None; n];
        for (pos, item) in data.iter().enumerate() {
            let idx = item["index"].as_u64().map(|i| i as usize).unwrap_or(pos);
            let values = item["embedding"]
                .as_array()
                .ok_or_else(|| bad("missing `embedding`"))?
                .iter()
                .map(|x| {
                    x.as_f64()
                        .map(T::from_f64_lossy)
                        .ok_or_else(|| bad("non-numeric entry"))
                })
                .collect::<Result<Vec<T>, _>>()?;
            let slot = slots
                .get_mut(idx)
                .ok_or_else(|| bad("index out of range"))?;
            *slot = Some(EmbeddingVector::new(values)?);
        }
        slots
            .into_iter()
            .map(|s| s.ok_or_else(|| bad("missing vector")))
            .collect()
    }
}

impl<T: Scalar> Embedder<T> for RemoteEmbedder {
    fn backend_id(&self) -> String {
        format!("remote:{}:{}", self.endpoint, self.model)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector<T>>, RetrievalError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let headers = self.headers()?;
        let body = json!({ "model": self.model, "input": texts });
        let (resp, attempts) = http::with_retry(&self.retry, || {
            http::send_json(
                &self.client,
                reqwest::Method::POST,
                &self.endpoint,
                &headers,
                Some(&body),
            )
        });
        let resp = resp.map_err(|e| {
            RetrievalError::BackendUnavailable(format!("{e} after {attempts} attempt(s)"))
        })?;
        let vectors = Self::parse(&resp, texts.len())?;
        if let Some(first) = vectors.first() {
            if let Some(bad) = vectors.iter().find(|v| v.dim() != first.dim()) {
                return Err(RetrievalError::DimensionMismatch {
                    expected: first.dim(),
                    got: bad.dim(),
                });
            }
        }
        Ok(vectors)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EmbedderConfig {
    Hashing {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    Remote {
        endpoint: String,
        model: String,
        #[serde(default)]
        credential_env: Option<String>,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default)]
        retry: RetryPolicy,
    },
}

fn default_dim() -> usize {
    512
}

fn default_timeout_ms() -> u64 {
    60_000
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Hashing { dim: default_dim() }
    }
}

impl EmbedderConfig {
    pub fn build<T: Scalar>(&self) -> Box<dyn Embedder<T>> {
        match self {
            EmbedderConfig::Hashing { dim } => Box::new(HashingEmbedder::with_dim(*dim)),
            EmbedderConfig::Remote {
                endpoint,
                model,
                credential_env,
                timeout_ms,
                retry,
            } => Box::new(RemoteEmbedder::new(
                endpoint.clone(),
                model.clone(),
                credential_env.clone(),
                *retry,
                Duration::from_millis(*timeout_ms),
            )),
        }
    }
}
