#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use medcorr::config::RunConfig;
use medcorr::gateway::{Gateway, MockProvider, ResponseCache};
use medcorr::pipeline::{self, PipelineError, RunOutcome};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

pub fn golden_report_path() -> PathBuf {
    fixture_dir().join("metrics.golden.json")
}

/// The fixture configuration with its outputs and cache redirected under
/// `work`.
pub fn golden_config(work: &Path) -> RunConfig {
    let mut cfg = RunConfig::load(&fixture_dir().join("run.toml")).expect("fixture config loads");
    cfg.output_dir = work.join("out");
    cfg.cache_dir = work.join("cache");
    cfg
}

pub fn mock_gateway(cfg: &RunConfig) -> (Gateway<Arc<MockProvider>>, Arc<MockProvider>) {
    let provider_cfg = cfg.provider.clone().expect("fixture has a provider");
    let fixture = provider_cfg.fixture.clone().expect("mock fixture");
    let mock = Arc::new(MockProvider::from_file(&fixture).expect("mock fixture loads"));
    let gateway = Gateway::new(
        provider_cfg,
        Arc::clone(&mock),
        ResponseCache::new(&cfg.cache_dir),
    )
    .expect("gateway");
    (gateway, mock)
}

/// ingest, index and run against a fresh mock.
pub fn ingest_index_run(cfg: &RunConfig) -> Result<(RunOutcome, Arc<MockProvider>), PipelineError> {
    pipeline::cmd_ingest(cfg)?;
    pipeline::cmd_index(cfg)?;
    let (gateway, mock) = mock_gateway(cfg);
    let outcome = pipeline::cmd_run_with(cfg, &gateway, None)?;
    Ok((outcome, mock))
}
