mod common;

use medcorr::config::StrategyKind;
use medcorr::metrics::{NaPolicy, ScorerError, SemanticScorer, SemanticScores};
use medcorr::pipeline::{self, PipelineError, ReportFormat};
use medcorr::retrieval::EmbedderConfig;

struct FixedScorer;

impl SemanticScorer for FixedScorer {
    fn score(&self, pairs: &[(String, String)]) -> Result<Vec<SemanticScores>, ScorerError> {
        Ok(pairs
            .iter()
            .map(|(c, r)| SemanticScores {
                bertscore: if c == r { 1.0 } else { 0.5 },
                bleurt: 0.25,
            })
            .collect())
    }
}

#[test]
fn in_memory_evaluation_matches_file_pipeline() {
    let work = tempfile::tempdir().unwrap();
    let cfg = common::golden_config(work.path());
    common::ingest_index_run(&cfg).unwrap();
    let scored = pipeline::cmd_score(&cfg, None, None).unwrap();

    let other = tempfile::tempdir().unwrap();
    let mut cfg2 = common::golden_config(other.path());
    cfg2.output_dir = other.path().join("unused");
    let (gateway, _) = common::mock_gateway(&cfg2);
    let report = pipeline::evaluate_with(&cfg2, &gateway, None).unwrap();
    assert_eq!(report.to_json(), scored.report.to_json());
    assert!(!cfg2.output_dir.exists());
}

#[test]
fn semantic_scores_reach_the_report() {
    let work = tempfile::tempdir().unwrap();
    let cfg = common::golden_config(work.path());
    common::ingest_index_run(&cfg).unwrap();
    let r = pipeline::cmd_score_with(&cfg, None, None, Some(&FixedScorer))
        .unwrap()
        .report;
    let mean = &r.corrections.mean;
    // one exact correction out of three scored
    assert!((mean.bertscore.unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert!((mean.bleurt.unwrap() - 0.25).abs() < 1e-12);
    let expected = (mean.rouge1.unwrap() + mean.bertscore.unwrap() + mean.bleurt.unwrap()) / 3.0;
    assert!((mean.aggscore.unwrap() - expected).abs() < 1e-12);
}

#[test]
fn missing_upstream_artifacts_name_their_producer() {
    let work = tempfile::tempdir().unwrap();
    let cfg = common::golden_config(work.path());
    let (gateway, _) = common::mock_gateway(&cfg);
    match pipeline::cmd_run_with(&cfg, &gateway, None) {
        Err(PipelineError::MissingArtifact { producer, .. }) => assert_eq!(producer, "ingest"),
        other => panic!("expected missing snapshot, got {other:?}"),
    }
    pipeline::cmd_ingest(&cfg).unwrap();
    match pipeline::cmd_run_with(&cfg, &gateway, None) {
        Err(PipelineError::MissingArtifact { producer, .. }) => assert_eq!(producer, "index"),
        other => panic!("expected missing index, got {other:?}"),
    }
    match pipeline::cmd_score(&cfg, None, None) {
        Err(e @ PipelineError::MissingArtifact { .. }) => {
            let rec = e.to_record();
            assert_eq!(rec["error"], "missing_artifact");
            assert_eq!(rec["producer"], "run");
        }
        other => panic!("expected missing predictions, got {other:?}"),
    }
}

#[test]
fn stale_artifacts_are_rejected() {
    let work = tempfile::tempdir().unwrap();
    let mut cfg = common::golden_config(work.path());
    common::ingest_index_run(&cfg).unwrap();

    // predictions belong to n = 3
    cfg.strategy.n = 2;
    match pipeline::cmd_score(&cfg, None, None) {
        Err(PipelineError::StaleArtifact { producer, .. }) => assert_eq!(producer, "run"),
        other => panic!("expected stale predictions, got {other:?}"),
    }

    // a different embedder invalidates the index
    let mut cfg = common::golden_config(work.path());
    let mut retrieval = cfg.retrieval.clone().unwrap();
    retrieval.embedder = EmbedderConfig::Hashing { dim: 64 };
    cfg.retrieval = Some(retrieval);
    let (gateway, _) = common::mock_gateway(&cfg);
    match pipeline::cmd_run_with(&cfg, &gateway, None) {
        Err(PipelineError::StaleArtifact { producer, .. }) => assert_eq!(producer, "index"),
        other => panic!("expected stale index, got {other:?}"),
    }
}

#[test]
fn scoring_settings_do_not_invalidate_predictions() {
    let work = tempfile::tempdir().unwrap();
    let mut cfg = common::golden_config(work.path());
    common::ingest_index_run(&cfg).unwrap();
    cfg.na_policy = NaPolicy::Zero;
    cfg.analysis.near_miss_distance = 2;
    let r = pipeline::cmd_score(&cfg, None, None).unwrap().report;
    assert_eq!(r.corrections.na_policy, NaPolicy::Zero);
}

#[test]
fn zero_shot_runs_without_an_index() {
    let work = tempfile::tempdir().unwrap();
    let mut cfg = common::golden_config(work.path());
    cfg.strategy.kind = StrategyKind::Zero;
    pipeline::cmd_ingest(&cfg).unwrap();
    let (gateway, mock) = common::mock_gateway(&cfg);
    let run = pipeline::cmd_run_with(&cfg, &gateway, None).unwrap();
    assert_eq!(run.n_notes, 6);
    assert_eq!(mock.calls(), 6);
    let audit = pipeline::read_audit(&run.audit).unwrap();
    assert!(audit.iter().all(|r| r.exemplars.is_empty()));
    assert!(!cfg.artifacts().index().exists());
}

#[test]
fn self_comparison_has_zero_deltas() {
    let work = tempfile::tempdir().unwrap();
    let cfg = common::golden_config(work.path());
    common::ingest_index_run(&cfg).unwrap();
    let scored = pipeline::cmd_score(&cfg, None, None).unwrap();
    let c = pipeline::cmd_compare(&scored.metrics, &scored.metrics, 200, 1).unwrap();
    assert!(!c.rows.is_empty());
    for row in &c.rows {
        if row.metric == "aggscore" {
            // no semantic scorer configured
            assert_eq!((row.n, row.delta), (0, None));
            continue;
        }
        assert_eq!(row.delta, Some(0.0), "{}", row.metric);
        let expected_n = if row.metric.ends_with("accuracy") {
            6
        } else {
            3
        };
        assert_eq!(row.n, expected_n, "{}", row.metric);
        assert!(row.p_value.is_none_or(|p| p == 1.0), "{}", row.metric);
    }
    assert!(c.table(4).contains("flag_accuracy"));
}

#[test]
fn report_formats_render_the_stored_report() {
    let work = tempfile::tempdir().unwrap();
    let cfg = common::golden_config(work.path());
    common::ingest_index_run(&cfg).unwrap();
    let scored = pipeline::cmd_score(&cfg, None, None).unwrap();
    let json = pipeline::cmd_report(&scored.metrics, ReportFormat::Json, 4).unwrap();
    assert_eq!(json, std::fs::read_to_string(&scored.metrics).unwrap());
    let text = pipeline::cmd_report(&scored.metrics, ReportFormat::Text, 4).unwrap();
    assert_eq!(text, scored.text);
    assert!(text.contains("0.6667"));
    let tsv = pipeline::cmd_report(&scored.metrics, ReportFormat::Tsv, 3).unwrap();
    assert!(tsv.contains("0.667"));
    for table in ["summary", "error_types", "subsets", "misclassification"] {
        assert!(cfg.artifacts().table(table).exists(), "{table}");
    }
}
