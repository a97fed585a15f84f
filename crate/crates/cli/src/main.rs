use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use medcorr::config::{ConfigInvalid, FieldError, Overrides, RunConfig, StrategyKind};
use medcorr::gateway::ProviderKind;
use medcorr::metrics::NaPolicy;
use medcorr::pipeline::{self, PipelineError, ReportFormat};

/// Medical error detection and correction evaluation harness.
///
/// Settings come from the TOML file given by --config; flags override the
/// file, which overrides built-in defaults. Credentials are read from the
/// environment variable the provider section names.
#[derive(Debug, Parser)]
#[command(name = "medcorr", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_strategy)]
    strategy: Option<StrategyKind>,
    /// Exemplars per prompt.
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// openai, anthropic or mock.
    #[arg(long, global = true, value_parser = parse_provider)]
    provider: Option<ProviderKind>,
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true)]
    max_in_flight: Option<usize>,
    /// exclude or zero.
    #[arg(long, global = true, value_parser = parse_na_policy)]
    na_policy: Option<NaPolicy>,
    /// Bootstrap iterations for `compare`.
    #[arg(long, global = true)]
    bootstrap: Option<usize>,
    /// Path of the command's main output file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load the corpus files and write the canonical snapshot.
    Ingest,
    /// Embed the training split into the exemplar index.
    Index,
    /// Build prompts, query the provider and write predictions.
    Run,
    /// Score a prediction file into a metrics report and tables.
    Score {
        /// Prediction file; defaults to the one `run` wrote.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Compare two metrics reports with a paired bootstrap.
    Compare { a: PathBuf, b: PathBuf },
    /// Render a stored metrics report.
    Report {
        /// Metrics file; defaults to the one `score` wrote.
        metrics: Option<PathBuf>,
        #[arg(long, default_value = "text", value_parser = parse_format)]
        format: ReportFormat,
        #[arg(long, default_value_t = 4)]
        precision: usize,
    },
}

fn parse_strategy(s: &str) -> Result<StrategyKind, String> {
    s.parse()
}

fn parse_na_policy(s: &str) -> Result<NaPolicy, String> {
    s.parse()
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse()
}

fn parse_provider(s: &str) -> Result<ProviderKind, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("unknown provider `{s}` (expected openai, anthropic or mock)"))
}

fn load_config(g: &Global) -> Result<RunConfig, PipelineError> {
    let path = g.config.as_ref().ok_or_else(|| ConfigInvalid {
        errors: vec![FieldError {
            field: "--config".into(),
            message: "a configuration file is required for this command".into(),
        }],
    })?;
    let mut cfg = RunConfig::load(path)?;
    cfg.apply(&Overrides {
        strategy: g.strategy,
        n: g.n,
        seed: g.seed,
        provider: g.provider,
        model: g.model.clone(),
        max_in_flight: g.max_in_flight,
        na_policy: g.na_policy,
        bootstrap_iterations: g.bootstrap,
    });
    Ok(cfg)
}

fn write_out(path: &Path, text: &str) -> Result<(), PipelineError> {
    std::fs::write(path, text).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn execute(cli: Cli) -> Result<(), PipelineError> {
    let g = &cli.global;
    match cli.command {
        Command::Ingest => {
            let mut cfg = load_config(g)?;
            if let Some(out) = &g.out {
                cfg.output_dir = out.clone();
            }
            let r = pipeline::cmd_ingest(&cfg)?;
            print!("{}", r.stats.render());
            println!(
                "{} notes -> {} ({})",
                r.n_notes,
                r.snapshot.display(),
                r.fingerprint
            );
        }
        Command::Index => {
            let mut cfg = load_config(g)?;
            if let Some(out) = &g.out {
                cfg.output_dir = out.clone();
            }
            let h = pipeline::cmd_index(&cfg)?;
            println!(
                "{} documents, {} chunks, dim {} ({})",
                h.n_documents, h.n_chunks, h.dim, h.backend_id
            );
        }
        Command::Run => {
            let cfg = load_config(g)?;
            let r = pipeline::cmd_run(&cfg, g.out.as_deref())?;
            let summary = serde_json::json!({
                "predictions": r.predictions.display().to_string(),
                "audit": r.audit.display().to_string(),
                "notes": r.n_notes,
                "provider_calls": r.stats.provider_calls,
                "cache_hits": r.stats.cache_hits,
                "clamped_notes": r.clamped_notes,
                "parse_status": r.parse_status,
            });
            println!("{summary}");
        }
        Command::Score { predictions } => {
            let cfg = load_config(g)?;
            let r = pipeline::cmd_score(&cfg, predictions.as_deref(), g.out.as_deref())?;
            print!("{}", r.text);
            println!("\nreport -> {}", r.metrics.display());
        }
        Command::Compare { a, b } => {
            let (iterations, seed, precision) = match &g.config {
                Some(_) => {
                    let cfg = load_config(g)?;
                    (
                        cfg.analysis.bootstrap_iterations,
                        cfg.seed,
                        cfg.analysis.precision,
                    )
                }
                None => (
                    g.bootstrap.unwrap_or(medcorr::metrics::DEFAULT_ITERATIONS),
                    g.seed.unwrap_or(42),
                    4,
                ),
            };
            let c = pipeline::cmd_compare(&a, &b, iterations, seed)?;
            print!("{}", c.table(precision));
            if let Some(out) = &g.out {
                write_out(
                    out,
                    &(serde_json::to_string_pretty(&c).expect("comparison serializes") + "\n"),
                )?;
            }
        }
        Command::Report {
            metrics,
            format,
            precision,
        } => {
            let path = match metrics {
                Some(p) => p,
                None => load_config(g)?.artifacts().metrics(),
            };
            let text = pipeline::cmd_report(&path, format, precision)?;
            match &g.out {
                Some(out) => write_out(out, &text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let record =
                serde_json::json!({ "error": "usage", "message": e.to_string().trim_end() });
            eprintln!("{record}");
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_record());
            ExitCode::FAILURE
        }
    }
}
