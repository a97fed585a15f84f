//! Evaluation harness for LLM medical error detection and correction.
//!
//! The pipeline runs corpus ingestion, exemplar retrieval, prompt
//! construction, provider dispatch, output parsing and scoring. Numeric code
//! is generic over [`Scalar`] (`f32` or `f64`); the aliases below fix it to
//! `f64`, which is what the CLI uses.

pub mod analysis;
pub mod config;
pub mod corpus;
pub mod gateway;
pub mod http;
pub mod metrics;
pub mod parsing;
pub mod pipeline;
pub mod prompting;
pub mod report;
pub mod retrieval;
pub mod scalar;
pub mod text;
pub mod util;

pub use scalar::{Rate, Scalar};

pub type Embedding = retrieval::EmbeddingVector<f64>;
pub type Index = retrieval::ExemplarIndex<f64>;
pub type Report = report::MetricsReport<f64>;
