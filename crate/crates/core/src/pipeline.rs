//! The subcommands: ingest, index, run, score, compare, report.
//!
//! Each command reads its inputs from the output directory, writes its own
//! artifact there and can be rerun on its own. Missing inputs are reported
//! with the command that produces them.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::load_human_labels;
use crate::config::{ConfigInvalid, RunConfig};
use crate::corpus::{
    corpus_stats, load_files, read_snapshot, write_snapshot, Corpus, CorpusError, CorpusStats,
    Split,
};
use crate::gateway::{Gateway, GatewayError, Provider, ResponseCache};
use crate::metrics::{gold_labels, score_corrections, HttpScorer, MetricsError, SemanticScorer};
use crate::parsing::{
    file_to_predictions, parse_completion, predictions_to_file, ParseStatus, Prediction,
    PredictionFileError,
};
use crate::prompting::{
    build_prompt, template_hash, ExemplarPool, PromptError, PromptStrategy, RenderedPrompt,
};
use crate::report::{
    build_report, compare_reports, comparison_table, render_aligned, render_text, render_tsv,
    report_tables, ComparisonRow, MetricsReport, Provenance, ReportOptions,
};
use crate::retrieval::{build_index, documents_fingerprint, IndexHeader, RetrievalError};
use crate::text::Tokenizer;
use crate::Index;

pub const AUDIT_FORMAT: &str = "medcorr-run-audit";
pub const AUDIT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigInvalid),
    #[error("{path} not found; run `{producer}` first")]
    MissingArtifact {
        path: PathBuf,
        producer: &'static str,
    },
    #[error("{path} is out of date ({reason}); rerun `{producer}`")]
    StaleArtifact {
        path: PathBuf,
        producer: &'static str,
        reason: String,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{} of {total} completions failed (first: {}: {})", failed.len(), failed[0].0, failed[0].1)]
    Completions {
        total: usize,
        failed: Vec<(String, String)>,
    },
    #[error("note {note_id} received exemplar {exemplar} from the {split} split")]
    SeparationViolation {
        note_id: String,
        exemplar: String,
        split: String,
    },
    #[error(transparent)]
    Predictions(#[from] PredictionFileError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {message}")]
    Artifact { path: PathBuf, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Stable machine-readable error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config_invalid",
            PipelineError::MissingArtifact { .. } => "missing_artifact",
            PipelineError::StaleArtifact { .. } => "stale_artifact",
            PipelineError::Corpus(_) => "corpus",
            PipelineError::Retrieval(_) => "retrieval",
            PipelineError::Prompt(_) => "prompt",
            PipelineError::Gateway(_) => "gateway",
            PipelineError::Completions { .. } => "completions_failed",
            PipelineError::SeparationViolation { .. } => "separation_violation",
            PipelineError::Predictions(_) => "predictions",
            PipelineError::Metrics(_) => "metrics",
            PipelineError::Artifact { .. } => "artifact",
            PipelineError::Io { .. } => "io",
        }
    }

    /// The error as a JSON record for stderr.
    pub fn to_record(&self) -> serde_json::Value {
        let mut rec = serde_json::json!({ "error": self.kind(), "message": self.to_string() });
        match self {
            PipelineError::Config(c) => {
                rec["fields"] = c
                    .errors
                    .iter()
                    .map(|e| serde_json::json!({ "field": e.field, "message": e.message }))
                    .collect();
            }
            PipelineError::MissingArtifact { path, producer }
            | PipelineError::StaleArtifact { path, producer, .. } => {
                rec["path"] = path.display().to_string().into();
                rec["producer"] = (*producer).into();
            }
            PipelineError::Completions { failed, .. } => {
                rec["failed"] = failed.iter().map(|(id, _)| id.clone()).collect();
            }
            _ => {}
        }
        rec
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Artifact locations under the output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn snapshot(&self) -> PathBuf {
        self.dir.join("corpus.jsonl")
    }

    pub fn index(&self) -> PathBuf {
        self.dir.join("index.jsonl")
    }

    pub fn predictions(&self) -> PathBuf {
        self.dir.join("predictions.jsonl")
    }

    pub fn audit(&self) -> PathBuf {
        self.dir.join("run_audit.jsonl")
    }

    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.json")
    }

    pub fn report_text(&self) -> PathBuf {
        self.dir.join("report.txt")
    }

    pub fn table(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{name}.tsv"))
    }
}

impl RunConfig {
    pub fn artifacts(&self) -> Artifacts {
        Artifacts::new(&self.output_dir)
    }
}

fn ensure_dir(dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn require(path: &Path, producer: &'static str) -> Result<(), PipelineError> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::MissingArtifact {
            path: path.to_path_buf(),
            producer,
        })
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub snapshot: PathBuf,
    pub n_notes: usize,
    pub fingerprint: String,
    pub stats: CorpusStats,
    pub warnings: Vec<String>,
}

/// Loads the configured corpus files and writes the canonical snapshot.
pub fn cmd_ingest(cfg: &RunConfig) -> Result<IngestOutcome, PipelineError> {
    cfg.validate()?;
    let corpus = load_files(&cfg.corpus.files, &cfg.corpus.schema)?;
    for w in &corpus.warnings {
        tracing::warn!("{w}");
    }
    let path = cfg.artifacts().snapshot();
    ensure_dir(&cfg.output_dir)?;
    write_snapshot(&path, &corpus.notes)?;
    Ok(IngestOutcome {
        snapshot: path,
        n_notes: corpus.len(),
        fingerprint: corpus.fingerprint(),
        stats: corpus_stats(&corpus.notes),
        warnings: corpus.warnings,
    })
}

pub fn load_snapshot(cfg: &RunConfig) -> Result<Corpus, PipelineError> {
    let path = cfg.artifacts().snapshot();
    require(&path, "ingest")?;
    Ok(read_snapshot(&path)?)
}

fn train_pool(corpus: &Corpus) -> ExemplarPool<'_> {
    ExemplarPool::from_train(corpus.split(Split::Train))
}

/// Embeds the training split in memory.
pub fn build_exemplar_index(cfg: &RunConfig, corpus: &Corpus) -> Result<Index, PipelineError> {
    let r = cfg.retrieval_or_default();
    let docs = train_pool(corpus).documents_with(r.document)?;
    Ok(build_index(&docs, &r.index_options(), r.embedder.build())?)
}

/// Builds and persists the exemplar index over the training split.
pub fn cmd_index(cfg: &RunConfig) -> Result<IndexHeader, PipelineError> {
    cfg.validate()?;
    let corpus = load_snapshot(cfg)?;
    let index = build_exemplar_index(cfg, &corpus)?;
    let path = cfg.artifacts().index();
    index.save(&path)?;
    Ok(index.header().clone())
}

fn load_exemplar_index(cfg: &RunConfig, corpus: &Corpus) -> Result<Index, PipelineError> {
    let path = cfg.artifacts().index();
    require(&path, "index")?;
    let r = cfg.retrieval_or_default();
    let docs = train_pool(corpus).documents_with(r.document)?;
    Index::load(
        &path,
        r.embedder.build(),
        &r.chunk,
        &documents_fingerprint(&docs),
    )
    .map_err(|e| match e {
        RetrievalError::StaleIndex(reason) => PipelineError::StaleArtifact {
            path,
            producer: "index",
            reason,
        },
        other => other.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditExemplar {
    pub note_id: String,
    pub split: Split,
}

/// One line of the run audit log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub note_id: String,
    pub split: Split,
    pub strategy: String,
    pub exemplars: Vec<AuditExemplar>,
    pub clamped: usize,
    pub prompt_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct AuditHeader {
    format: String,
    version: u32,
    config_fingerprint: String,
    count: usize,
}

/// Prompts for every note of the evaluation split, in corpus order. Fails
/// before any dispatch if an exemplar comes from outside the training split.
pub fn build_prompts(
    cfg: &RunConfig,
    corpus: &Corpus,
    index: Option<&Index>,
) -> Result<(Vec<RenderedPrompt>, Vec<AuditRecord>), PipelineError> {
    let strategy = cfg.prompt_strategy();
    let pool = train_pool(corpus);
    let splits: BTreeMap<&str, Split> = corpus
        .notes
        .iter()
        .map(|n| (n.note_id.as_str(), n.split))
        .collect();
    let mut prompts = Vec::new();
    let mut audit = Vec::new();
    for note in corpus.split(cfg.corpus.eval_split) {
        let prompt = build_prompt(note, &strategy, &pool, index, &cfg.prompt)?;
        let exemplars: Vec<AuditExemplar> = prompt
            .exemplar_note_ids
            .iter()
            .map(|id| AuditExemplar {
                note_id: id.clone(),
                split: splits.get(id.as_str()).copied().unwrap_or(Split::Test),
            })
            .collect();
        if let Some(bad) = exemplars
            .iter()
            .find(|e| e.split != Split::Train || e.note_id == note.note_id)
        {
            return Err(PipelineError::SeparationViolation {
                note_id: note.note_id.clone(),
                exemplar: bad.note_id.clone(),
                split: bad.split.to_string(),
            });
        }
        audit.push(AuditRecord {
            note_id: note.note_id.clone(),
            split: note.split,
            strategy: strategy.label(),
            exemplars,
            clamped: prompt.clamped,
            prompt_hash: prompt.text_hash.clone(),
        });
        prompts.push(prompt);
    }
    Ok((prompts, audit))
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DispatchStats {
    pub provider_calls: usize,
    pub cache_hits: usize,
}

/// Sends every prompt and parses the answers. Successful completions are
/// cached even when others fail, so a rerun only retries the failures.
pub fn dispatch<P: Provider + Sync>(
    cfg: &RunConfig,
    corpus: &Corpus,
    gateway: &Gateway<P>,
    prompts: &[RenderedPrompt],
) -> Result<(Vec<Prediction>, DispatchStats), PipelineError> {
    let results = gateway.complete_batch(prompts);
    let mut stats = DispatchStats::default();
    let mut failed = Vec::new();
    let mut preds = Vec::with_capacity(prompts.len());
    for (prompt, result) in prompts.iter().zip(results) {
        match result {
            Ok(c) => {
                if c.from_cache {
                    stats.cache_hits += 1;
                } else {
                    stats.provider_calls += 1;
                }
                let note = corpus
                    .get(&prompt.note_id)
                    .expect("prompt built from corpus note");
                preds.push(parse_completion(&c.raw_text, note, cfg.failed_parse));
            }
            Err(e) => failed.push((prompt.note_id.clone(), e.to_string())),
        }
    }
    if !failed.is_empty() {
        return Err(PipelineError::Completions {
            total: prompts.len(),
            failed,
        });
    }
    Ok((preds, stats))
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub predictions: PathBuf,
    pub audit: PathBuf,
    pub n_notes: usize,
    pub stats: DispatchStats,
    pub clamped_notes: usize,
    pub parse_status: BTreeMap<ParseStatus, usize>,
}

pub fn gateway_for(cfg: &RunConfig) -> Result<Gateway, PipelineError> {
    let provider = cfg.provider.clone().ok_or_else(|| {
        PipelineError::Config(ConfigInvalid {
            errors: vec![crate::config::FieldError {
                field: "provider".into(),
                message: "required for `run`".into(),
            }],
        })
    })?;
    Ok(Gateway::from_config(
        provider,
        ResponseCache::new(&cfg.cache_dir),
    )?)
}

/// `run` with the provider named in the configuration.
pub fn cmd_run(cfg: &RunConfig, out: Option<&Path>) -> Result<RunOutcome, PipelineError> {
    cfg.validate()?;
    let gateway = gateway_for(cfg)?;
    cmd_run_with(cfg, &gateway, out)
}

/// Builds prompts, dispatches them through `gateway`, parses the answers and
/// writes the prediction file and the audit log.
pub fn cmd_run_with<P: Provider + Sync>(
    cfg: &RunConfig,
    gateway: &Gateway<P>,
    out: Option<&Path>,
) -> Result<RunOutcome, PipelineError> {
    cfg.validate()?;
    let corpus = load_snapshot(cfg)?;
    let index = match cfg.prompt_strategy() {
        PromptStrategy::Rdp { .. } => Some(load_exemplar_index(cfg, &corpus)?),
        _ => None,
    };
    let (prompts, audit) = build_prompts(cfg, &corpus, index.as_ref())?;
    let (preds, stats) = dispatch(cfg, &corpus, gateway, &prompts)?;

    let fingerprint = cfg.run_fingerprint(&corpus.fingerprint());
    let artifacts = cfg.artifacts();
    ensure_dir(&artifacts.dir)?;
    let predictions = out.map_or_else(|| artifacts.predictions(), Path::to_path_buf);
    if let Some(parent) = predictions.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    predictions_to_file(&preds, &fingerprint, &predictions)?;
    let audit_path = artifacts.audit();
    write_audit(&audit_path, &fingerprint, &audit)?;

    let mut parse_status = BTreeMap::new();
    for p in &preds {
        *parse_status.entry(p.parse_status).or_insert(0) += 1;
    }
    tracing::info!(
        notes = preds.len(),
        provider_calls = stats.provider_calls,
        cache_hits = stats.cache_hits,
        "run complete"
    );
    Ok(RunOutcome {
        predictions,
        audit: audit_path,
        n_notes: preds.len(),
        stats,
        clamped_notes: audit.iter().filter(|a| a.clamped > 0).count(),
        parse_status,
    })
}

fn write_audit(
    path: &Path,
    fingerprint: &str,
    records: &[AuditRecord],
) -> Result<(), PipelineError> {
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let header = AuditHeader {
        format: AUDIT_FORMAT.into(),
        version: AUDIT_VERSION,
        config_fingerprint: fingerprint.into(),
        count: records.len(),
    };
    let mut line = |v: String| writeln!(out, "{v}").map_err(io_err(path));
    line(serde_json::to_string(&header).expect("header serializes"))?;
    for r in records {
        line(serde_json::to_string(r).expect("audit record serializes"))?;
    }
    out.flush().map_err(io_err(path))
}

pub fn read_audit(path: &Path) -> Result<Vec<AuditRecord>, PipelineError> {
    require(path, "run")?;
    let bad = |line: usize, message: String| PipelineError::Artifact {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    };
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if i == 0 {
            let h: AuditHeader = serde_json::from_str(&line).map_err(|e| bad(1, e.to_string()))?;
            if h.format != AUDIT_FORMAT || h.version != AUDIT_VERSION {
                return Err(bad(
                    1,
                    format!("unsupported audit log {} v{}", h.format, h.version),
                ));
            }
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| bad(i + 1, e.to_string()))?);
    }
    Ok(records)
}

/// Checks a run audit log against the corpus: every exemplar must be a
/// training note other than its target. Returns the number of exemplars
/// checked.
pub fn audit_separation(path: &Path, corpus: &Corpus) -> Result<usize, PipelineError> {
    let splits: BTreeMap<&str, Split> = corpus
        .notes
        .iter()
        .map(|n| (n.note_id.as_str(), n.split))
        .collect();
    let mut checked = 0;
    for rec in read_audit(path)? {
        for e in &rec.exemplars {
            let actual = splits.get(e.note_id.as_str()).copied();
            if e.split != Split::Train || actual != Some(Split::Train) || e.note_id == rec.note_id {
                return Err(PipelineError::SeparationViolation {
                    note_id: rec.note_id.clone(),
                    exemplar: e.note_id.clone(),
                    split: actual.map_or_else(|| "unknown".to_string(), |s| s.to_string()),
                });
            }
            checked += 1;
        }
    }
    Ok(checked)
}

fn semantic_scorer(cfg: &RunConfig) -> Option<HttpScorer> {
    cfg.scorer
        .as_ref()
        .map(|s| HttpScorer::new(&s.endpoint, Duration::from_millis(s.timeout_ms), s.retry))
}

/// Computes the metrics report for `preds` against the evaluation split.
pub fn score_predictions(
    cfg: &RunConfig,
    corpus: &Corpus,
    preds: &[Prediction],
    scorer: Option<&dyn SemanticScorer>,
) -> Result<MetricsReport<f64>, PipelineError> {
    let golds = gold_labels(corpus.split(cfg.corpus.eval_split));
    let corrections =
        score_corrections(&golds, preds, scorer, &Tokenizer::default(), cfg.na_policy)?;
    let human_labels = match &cfg.analysis.human_labels {
        Some(p) => load_human_labels(p).map_err(|e| PipelineError::Artifact {
            path: p.clone(),
            message: e.to_string(),
        })?,
        None => BTreeMap::new(),
    };
    let corpus_fp = corpus.fingerprint();
    let provider = cfg.provider.as_ref();
    let provenance = Provenance {
        config_fingerprint: cfg.fingerprint(&corpus_fp),
        strategy: cfg.prompt_strategy().label(),
        provider: provider.map(|p| p.name.clone()).unwrap_or_default(),
        model: provider.map(|p| p.model.clone()).unwrap_or_default(),
        template_hash: template_hash(),
        corpus_fingerprint: corpus_fp,
        scorer: None,
    };
    let options = ReportOptions {
        na_policy: cfg.na_policy,
        near_miss_distance: cfg.analysis.near_miss_distance,
        human_labels,
    };
    Ok(build_report(
        &golds,
        preds,
        &corrections,
        &options,
        provenance,
    )?)
}

#[derive(Debug, Clone)]
pub struct ScoreOutcome {
    pub report: MetricsReport<f64>,
    pub metrics: PathBuf,
    pub text: String,
}

/// `score` with the scorer service named in the configuration, if any.
pub fn cmd_score(
    cfg: &RunConfig,
    predictions: Option<&Path>,
    out: Option<&Path>,
) -> Result<ScoreOutcome, PipelineError> {
    let scorer = semantic_scorer(cfg);
    cmd_score_with(
        cfg,
        predictions,
        out,
        scorer.as_ref().map(|s| s as &dyn SemanticScorer),
    )
}

/// Scores a prediction file and writes the report and its tables.
pub fn cmd_score_with(
    cfg: &RunConfig,
    predictions: Option<&Path>,
    out: Option<&Path>,
    scorer: Option<&dyn SemanticScorer>,
) -> Result<ScoreOutcome, PipelineError> {
    cfg.validate()?;
    let corpus = load_snapshot(cfg)?;
    let artifacts = cfg.artifacts();
    let pred_path = predictions.map_or_else(|| artifacts.predictions(), Path::to_path_buf);
    require(&pred_path, "run")?;
    let (header, preds) = file_to_predictions(&pred_path)?;
    let expected = cfg.run_fingerprint(&corpus.fingerprint());
    if header.config_fingerprint != expected {
        return Err(PipelineError::StaleArtifact {
            path: pred_path,
            producer: "run",
            reason: "configuration fingerprint differs".into(),
        });
    }
    let report = score_predictions(cfg, &corpus, &preds, scorer)?;

    let metrics = out.map_or_else(|| artifacts.metrics(), Path::to_path_buf);
    write_file(&metrics, &report.to_json())?;
    let precision = cfg.analysis.precision;
    for (name, rows) in report_tables(&report, precision) {
        write_file(&artifacts.table(name), &render_tsv(&rows))?;
    }
    let text = render_text(&report, precision);
    write_file(&artifacts.report_text(), &text)?;
    Ok(ScoreOutcome {
        report,
        metrics,
        text,
    })
}

pub fn read_report(path: &Path) -> Result<MetricsReport<f64>, PipelineError> {
    require(path, "score")?;
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Artifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub iterations: usize,
    pub seed: u64,
    pub rows: Vec<ComparisonRow<f64>>,
}

impl Comparison {
    pub fn table(&self, precision: usize) -> String {
        render_aligned(&comparison_table(&self.rows, precision))
    }
}

/// Metric deltas between two reports, with paired bootstrap p-values when
/// `iterations > 0`.
pub fn cmd_compare(
    a: &Path,
    b: &Path,
    iterations: usize,
    seed: u64,
) -> Result<Comparison, PipelineError> {
    let (ra, rb) = (read_report(a)?, read_report(b)?);
    Ok(Comparison {
        a: ra.provenance.config_fingerprint.clone(),
        b: rb.provenance.config_fingerprint.clone(),
        iterations,
        seed,
        rows: compare_reports(&ra, &rb, iterations, seed),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Text,
    Tsv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "tsv" => Ok(ReportFormat::Tsv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!(
                "unknown format `{other}` (expected text, tsv or json)"
            )),
        }
    }
}

/// Renders a stored metrics report.
pub fn cmd_report(
    metrics: &Path,
    format: ReportFormat,
    precision: usize,
) -> Result<String, PipelineError> {
    let report = read_report(metrics)?;
    Ok(match format {
        ReportFormat::Text => render_text(&report, precision),
        ReportFormat::Json => report.to_json(),
        ReportFormat::Tsv => report_tables(&report, precision)
            .iter()
            .map(|(_, rows)| render_tsv(rows))
            .collect::<Vec<_>>()
            .join("\n"),
    })
}

/// Ingest, index, run and score in memory without touching the output
/// directory. Matches the file-based commands on the same configuration.
pub fn evaluate_with<P: Provider + Sync>(
    cfg: &RunConfig,
    gateway: &Gateway<P>,
    scorer: Option<&dyn SemanticScorer>,
) -> Result<MetricsReport<f64>, PipelineError> {
    cfg.validate()?;
    let corpus = load_files(&cfg.corpus.files, &cfg.corpus.schema)?;
    let index = match cfg.prompt_strategy() {
        PromptStrategy::Rdp { .. } => Some(build_exemplar_index(cfg, &corpus)?),
        _ => None,
    };
    let (prompts, _) = build_prompts(cfg, &corpus, index.as_ref())?;
    let (preds, _) = dispatch(cfg, &corpus, gateway, &prompts)?;
    score_predictions(cfg, &corpus, &preds, scorer)
}
