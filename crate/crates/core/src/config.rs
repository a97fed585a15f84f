//! Run configuration: a TOML file plus command-line overrides.
//!
//! Precedence is flags > file > built-in defaults. Relative paths in a file
//! resolve against the file's directory.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::corpus::{ColumnSchema, CorpusFile, Split};
use crate::gateway::{ProviderConfig, ProviderKind};
use crate::http::RetryPolicy;
use crate::metrics::{NaPolicy, DEFAULT_ITERATIONS};
use crate::parsing::FailedParsePolicy;
use crate::prompting::{template_hash, IndexedText, PromptOptions, PromptStrategy, SprSampling};
use crate::retrieval::{ChunkConfig, EmbedderConfig, IndexOptions, Metric};
use crate::util::sha256_hex;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ConfigInvalid {
    pub errors: Vec<FieldError>,
}

impl fmt::Display for ConfigInvalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration: ")?;
        for (i, e) in self.errors.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl ConfigInvalid {
    fn single(field: &str, message: impl Into<String>) -> Self {
        Self {
            errors: vec![FieldError {
                field: field.into(),
                message: message.into(),
            }],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    #[default]
    Zero,
    Spr,
    Rdp,
}

impl std::str::FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero" | "zero-shot" => Ok(StrategyKind::Zero),
            "spr" => Ok(StrategyKind::Spr),
            "rdp" => Ok(StrategyKind::Rdp),
            other => Err(format!(
                "unknown strategy `{other}` (expected zero, spr or rdp)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub files: Vec<CorpusFile>,
    pub schema: ColumnSchema,
    /// Split whose notes are sent to the model.
    pub eval_split: Split,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            files: Vec::new(),
            schema: ColumnSchema::default(),
            eval_split: Split::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategySection {
    pub kind: StrategyKind,
    /// Exemplars per prompt; also the retrieval depth for RDP.
    pub n: usize,
    pub sampling: SprSampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub metric: Metric,
    /// Text embedded per training note.
    pub document: IndexedText,
    pub chunk: ChunkConfig,
    pub embedder: EmbedderConfig,
    pub batch_size: usize,
    pub max_in_flight: usize,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        let o = IndexOptions::default();
        Self {
            metric: Metric::Cosine,
            document: IndexedText::Exemplar,
            chunk: o.chunk,
            embedder: EmbedderConfig::default(),
            batch_size: o.batch_size,
            max_in_flight: o.max_in_flight,
        }
    }
}

impl RetrievalSection {
    pub fn index_options(&self) -> IndexOptions {
        IndexOptions {
            chunk: self.chunk.clone(),
            batch_size: self.batch_size,
            max_in_flight: self.max_in_flight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerSection {
    pub endpoint: String,
    pub timeout_ms: u64,
    pub retry: RetryPolicy,
}

impl Default for ScorerSection {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            timeout_ms: 300_000,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub near_miss_distance: u64,
    /// CSV of `note_id,category` merged into reports.
    pub human_labels: Option<PathBuf>,
    pub bootstrap_iterations: usize,
    /// Decimals in text and TSV tables.
    pub precision: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            near_miss_distance: 1,
            human_labels: None,
            bootstrap_iterations: DEFAULT_ITERATIONS,
            precision: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
    pub na_policy: NaPolicy,
    pub failed_parse: FailedParsePolicy,
    pub corpus: CorpusSection,
    pub strategy: StrategySection,
    pub prompt: PromptOptions,
    pub provider: Option<ProviderConfig>,
    pub retrieval: Option<RetrievalSection>,
    pub scorer: Option<ScorerSection>,
    pub analysis: AnalysisSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            cache_dir: PathBuf::from("cache"),
            output_dir: PathBuf::from("out"),
            na_policy: NaPolicy::Exclude,
            failed_parse: FailedParsePolicy::FlagError,
            corpus: CorpusSection::default(),
            strategy: StrategySection::default(),
            prompt: PromptOptions::default(),
            provider: None,
            retrieval: None,
            scorer: None,
            analysis: AnalysisSection::default(),
        }
    }
}

/// Command-line overrides; `None` leaves the file value in place.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub strategy: Option<StrategyKind>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub provider: Option<ProviderKind>,
    pub model: Option<String>,
    pub max_in_flight: Option<usize>,
    pub na_policy: Option<NaPolicy>,
    pub bootstrap_iterations: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigInvalid> {
        toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map_or_else(|| "<file>".to_string(), |s| format!("<file>@{}", s.start));
            ConfigInvalid::single(&field, e.message())
        })
    }

    /// Reads `path` and resolves its relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigInvalid> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigInvalid::single("--config", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.cache_dir);
        fix(&mut self.output_dir);
        for f in &mut self.corpus.files {
            fix(&mut f.path);
        }
        if let Some(fixture) = self.provider.as_mut().and_then(|p| p.fixture.as_mut()) {
            fix(fixture);
        }
        if let Some(labels) = self.analysis.human_labels.as_mut() {
            fix(labels);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(k) = o.strategy {
            self.strategy.kind = k;
        }
        if let Some(n) = o.n {
            self.strategy.n = n;
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if o.provider.is_some() || o.model.is_some() || o.max_in_flight.is_some() {
            let p = self
                .provider
                .get_or_insert_with(|| ProviderConfig::mock(""));
            if let Some(kind) = o.provider {
                if p.kind != kind {
                    p.kind = kind;
                    p.name = match kind {
                        ProviderKind::OpenAi => "openai",
                        ProviderKind::Anthropic => "anthropic",
                        ProviderKind::Mock => "mock",
                    }
                    .into();
                }
            }
            if let Some(m) = &o.model {
                p.model = m.clone();
            }
            if let Some(m) = o.max_in_flight {
                p.max_in_flight = m;
            }
        }
        if let Some(na) = o.na_policy {
            self.na_policy = na;
        }
        if let Some(it) = o.bootstrap_iterations {
            self.analysis.bootstrap_iterations = it;
        }
        if self.strategy.kind == StrategyKind::Rdp
            && self.retrieval.is_none()
            && o.strategy.is_some()
        {
            self.retrieval = Some(RetrievalSection::default());
        }
    }

    /// The strategy with the run seed folded in.
    pub fn prompt_strategy(&self) -> PromptStrategy {
        let n = self.strategy.n;
        match self.strategy.kind {
            StrategyKind::Zero => PromptStrategy::ZeroShot,
            StrategyKind::Spr => PromptStrategy::Spr {
                n,
                seed: self.seed,
                sampling: self.strategy.sampling,
            },
            StrategyKind::Rdp => PromptStrategy::Rdp { n },
        }
    }

    /// Retrieval settings, or defaults when the section is absent.
    pub fn retrieval_or_default(&self) -> RetrievalSection {
        self.retrieval.clone().unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), ConfigInvalid> {
        let mut errors = Vec::new();
        let mut err = |field: &str, message: String| {
            errors.push(FieldError {
                field: field.into(),
                message,
            })
        };
        if self.corpus.files.is_empty() {
            err(
                "corpus.files",
                "at least one corpus file is required".into(),
            );
        }
        for (i, f) in self.corpus.files.iter().enumerate() {
            if !f.path.is_file() {
                err(
                    &format!("corpus.files[{i}].path"),
                    format!("{} does not exist", f.path.display()),
                );
            }
        }
        if !self.corpus.schema.delimiter.is_ascii() {
            err(
                "corpus.schema.delimiter",
                "must be a single ASCII character".into(),
            );
        }
        if self.strategy.kind == StrategyKind::Rdp {
            if self.strategy.n == 0 {
                err("strategy.n", "rdp needs at least one exemplar".into());
            }
            if self.retrieval.is_none() {
                err("retrieval", "required when strategy.kind = \"rdp\"".into());
            }
        }
        if self.prompt.chars_per_token == 0 {
            err("prompt.chars_per_token", "must be at least 1".into());
        }
        if self.prompt.context_budget_tokens == 0 {
            err("prompt.context_budget_tokens", "must be at least 1".into());
        }
        if let Some(r) = &self.retrieval {
            if let Err(e) = r.chunk.validate() {
                err("retrieval.chunk", e.to_string());
            }
            if r.batch_size == 0 {
                err("retrieval.batch_size", "must be at least 1".into());
            }
            if r.max_in_flight == 0 {
                err("retrieval.max_in_flight", "must be at least 1".into());
            }
            if let EmbedderConfig::Hashing { dim: 0 } = r.embedder {
                err("retrieval.embedder.dim", "must be at least 1".into());
            }
        }
        if let Some(p) = &self.provider {
            if let Err(e) = p.validate() {
                err("provider", e.to_string());
            }
            if p.kind == ProviderKind::Mock {
                match &p.fixture {
                    Some(f) if f.is_file() => {}
                    Some(f) => err(
                        "provider.fixture",
                        format!("{} does not exist", f.display()),
                    ),
                    None => err("provider.fixture", "required for the mock provider".into()),
                }
            }
        }
        if let Some(s) = &self.scorer {
            if s.endpoint.is_empty() {
                err("scorer.endpoint", "must not be empty".into());
            }
            if s.timeout_ms == 0 {
                err("scorer.timeout_ms", "must be positive".into());
            }
        }
        if let Some(h) = &self.analysis.human_labels {
            if !h.is_file() {
                err(
                    "analysis.human_labels",
                    format!("{} does not exist", h.display()),
                );
            }
        }
        if self.analysis.bootstrap_iterations == 0 {
            err("analysis.bootstrap_iterations", "must be at least 1".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigInvalid { errors })
        }
    }

    /// Hash over every setting that can change a prediction. Paths,
    /// concurrency, timeouts and retry settings are excluded. The mock
    /// fixture contributes its contents, not its location.
    pub fn run_fingerprint(&self, corpus_fingerprint: &str) -> String {
        let strategy = self.prompt_strategy();
        let provider = self.provider.as_ref().map(|p| {
            let fixture = p
                .fixture
                .as_ref()
                .and_then(|f| std::fs::read(f).ok())
                .map(sha256_hex);
            json!({
                "name": p.name,
                "kind": p.kind,
                "endpoint": p.endpoint,
                "model": p.model,
                "temperature": p.temperature,
                "max_tokens": p.max_tokens,
                "fixture": fixture,
            })
        });
        let retrieval = match strategy {
            PromptStrategy::Rdp { .. } => {
                let r = self.retrieval_or_default();
                let embedder = match &r.embedder {
                    EmbedderConfig::Hashing { dim } => json!({"kind": "hashing", "dim": dim}),
                    EmbedderConfig::Remote {
                        endpoint, model, ..
                    } => {
                        json!({"kind": "remote", "endpoint": endpoint, "model": model})
                    }
                };
                Some(
                    json!({"metric": r.metric, "document": r.document, "chunk": r.chunk, "embedder": embedder}),
                )
            }
            _ => None,
        };
        let view = json!({
            "corpus": corpus_fingerprint,
            "schema": self.corpus.schema,
            "eval_split": self.corpus.eval_split,
            "template": template_hash(),
            "strategy": strategy,
            "prompt": self.prompt,
            "provider": provider,
            "retrieval": retrieval,
            "failed_parse": self.failed_parse,
        });
        sha256_hex(view.to_string())
    }

    /// Run fingerprint extended with the scoring settings.
    pub fn fingerprint(&self, corpus_fingerprint: &str) -> String {
        let scorer = self.scorer.as_ref().map(|s| s.endpoint.clone());
        let human_labels = self
            .analysis
            .human_labels
            .as_ref()
            .and_then(|f| std::fs::read(f).ok())
            .map(sha256_hex);
        let view = json!({
            "run": self.run_fingerprint(corpus_fingerprint),
            "na_policy": self.na_policy,
            "scorer": scorer,
            "near_miss_distance": self.analysis.near_miss_distance,
            "human_labels": human_labels,
        });
        sha256_hex(view.to_string())
    }
}
