//! Exemplar vector store: chunking, embedding, exact top-k search.

mod chunk;
mod embed;
mod index;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Split;
use crate::scalar::Scalar;

pub use chunk::{chunk_document, ChunkConfig, TextChunk};
pub use embed::{embed, Embedder, EmbedderConfig, HashingEmbedder, RemoteEmbedder};
pub use index::{
    build_index, documents_fingerprint, Chunk, ExemplarIndex, IndexHeader, IndexOptions,
    INDEX_VERSION,
};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("invalid chunk configuration: {0}")]
    InvalidConfig(String),
    #[error("embedding backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("embedding must be nonempty with finite entries")]
    InvalidEmbedding,
    #[error("document `{0}` is not from the training split")]
    NonTrainDocument(String),
    #[error("index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("index file is stale: {0}")]
    StaleIndex(String),
    #[error("index file {path}: {message}")]
    IndexFile { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    #[default]
    Cosine,
    DotProduct,
}

/// A dense embedding with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self, RetrievalError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::InvalidEmbedding);
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn norm(&self) -> T {
        norm(&self.values)
    }

    pub fn scaled(&self, factor: T) -> Result<Self, RetrievalError> {
        Self::new(self.values.iter().map(|v| *v * factor).collect())
    }
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

pub(crate) fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Cosine from a precomputed dot product and norms, clamped to `[-1, 1]`.
pub(crate) fn cosine_from_parts<T: Scalar>(dot: T, norm_a: T, norm_b: T) -> T {
    (dot / (norm_a * norm_b)).max(-T::one()).min(T::one())
}

/// Cosine similarity or raw inner product.
pub fn similarity<T: Scalar>(
    a: &EmbeddingVector<T>,
    b: &EmbeddingVector<T>,
    metric: Metric,
) -> Result<T, RetrievalError> {
    if a.dim() != b.dim() {
        return Err(RetrievalError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let d = dot(&a.values, &b.values);
    match metric {
        Metric::DotProduct => Ok(d),
        Metric::Cosine => {
            let (na, nb) = (a.norm(), b.norm());
            if na == T::zero() || nb == T::zero() {
                return Err(RetrievalError::ZeroVector);
            }
            Ok(cosine_from_parts(d, na, nb))
        }
    }
}

/// A training note rendered together with its gold answer, as stored in the
/// index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExemplarDocument {
    pub note_id: String,
    pub split: Split,
    pub rendered_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit<T> {
    pub note_id: String,
    pub score: T,
    /// 1-based.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult<T> {
    pub hits: Vec<RetrievalHit<T>>,
}

impl<T> RetrievalResult<T> {
    pub fn note_ids(&self) -> impl Iterator<Item = &str> {
        self.hits.iter().map(|h| h.note_id.as_str())
    }
}
