//! The metrics report artifact and its text renderings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analysis::{
    by_error_type, by_subset, categorize, Category, MisclassificationLabel, SubsetRow, TypeRow,
};
use crate::metrics::{
    align, confusion, paired_bootstrap, recall_error_present, sentence_correct, ConfusionCounts,
    CorrectionScores, CorrectionSummary, GoldLabel, MetricsError, NaPolicy, RecallPair,
};
use crate::parsing::{ParseStatus, Prediction};
use crate::scalar::{Rate, Scalar};

pub const REPORT_FORMAT: &str = "medcorr-metrics";
pub const REPORT_VERSION: u32 = 1;

/// Where a report came from. Everything here is deterministic for a given
/// configuration; timestamps are deliberately absent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub config_fingerprint: String,
    pub strategy: String,
    pub provider: String,
    pub model: String,
    pub template_hash: String,
    pub corpus_fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scorer: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteRecord<T> {
    pub note_id: String,
    pub gold_flag: bool,
    pub pred_flag: bool,
    pub flag_correct: bool,
    pub sentence_correct: bool,
    pub parse_status: ParseStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corrections: Option<CorrectionScores<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionBlock<T> {
    pub na_policy: NaPolicy,
    pub mean: CorrectionScores<T>,
    pub n_scored: usize,
    pub n_na: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<T> {
    pub format: String,
    pub version: u32,
    pub provenance: Provenance,
    pub n_notes: usize,
    pub counts: ConfusionCounts,
    pub flag_accuracy: Rate,
    pub sentence_accuracy: Rate,
    pub recall: RecallPair,
    pub fpr: Rate,
    pub corrections: CorrectionBlock<T>,
    pub by_error_type: Vec<TypeRow<T>>,
    pub by_subset: Vec<SubsetRow<T>>,
    pub misclassification: BTreeMap<Category, Rate>,
    pub misclassified: Vec<MisclassificationLabel>,
    pub parse_status: BTreeMap<ParseStatus, usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub human_labels: BTreeMap<String, String>,
    pub warnings: Vec<String>,
    pub per_note: Vec<NoteRecord<T>>,
}

#[derive(Debug, Clone)]
pub struct ReportOptions {
    pub na_policy: NaPolicy,
    pub near_miss_distance: u64,
    pub human_labels: BTreeMap<String, String>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            na_policy: NaPolicy::Exclude,
            near_miss_distance: 1,
            human_labels: BTreeMap::new(),
        }
    }
}

pub fn build_report<T: Scalar>(
    golds: &[GoldLabel],
    preds: &[Prediction],
    corrections: &CorrectionSummary<T>,
    options: &ReportOptions,
    mut provenance: Provenance,
) -> Result<MetricsReport<T>, MetricsError> {
    let pairs = align(golds, preds)?;
    let counts = confusion(golds, preds)?;
    let by_note: BTreeMap<&str, &CorrectionScores<T>> = corrections
        .per_note
        .iter()
        .filter_map(|n| Some((n.note_id.as_str(), n.scores.as_ref()?)))
        .collect();
    let per_note: Vec<NoteRecord<T>> = pairs
        .iter()
        .map(|(g, p)| NoteRecord {
            note_id: g.note_id.clone(),
            gold_flag: g.flag,
            pred_flag: p.flag,
            flag_correct: g.flag == p.flag,
            sentence_correct: sentence_correct(g, p),
            parse_status: p.parse_status,
            corrections: by_note.get(g.note_id.as_str()).map(|s| **s),
        })
        .collect();
    let mut parse_status = BTreeMap::new();
    for (_, p) in &pairs {
        *parse_status.entry(p.parse_status).or_insert(0) += 1;
    }
    let cat = categorize(golds, preds, options.near_miss_distance)?;
    provenance.scorer = provenance
        .scorer
        .or_else(|| corrections.scorer_provenance.clone());
    let human_labels = options
        .human_labels
        .iter()
        .filter(|(id, _)| {
            by_note.contains_key(id.as_str()) || pairs.iter().any(|(g, _)| g.note_id == **id)
        })
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();

    Ok(MetricsReport {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        provenance,
        n_notes: pairs.len(),
        flag_accuracy: counts.accuracy(),
        sentence_accuracy: Rate::new(
            per_note.iter().filter(|n| n.sentence_correct).count(),
            pairs.len(),
        ),
        recall: recall_error_present(golds, preds)?,
        fpr: counts.fpr(),
        counts,
        corrections: CorrectionBlock {
            na_policy: options.na_policy,
            mean: corrections.mean,
            n_scored: corrections.n_scored,
            n_na: corrections.n_na,
        },
        by_error_type: by_error_type(golds, preds, corrections)?,
        by_subset: by_subset(golds, preds, corrections)?,
        misclassification: cat.rates,
        misclassified: cat.labels,
        parse_status,
        human_labels,
        warnings: corrections.warnings.clone(),
        per_note,
    })
}

impl<T: Scalar + Serialize> MetricsReport<T> {
    /// Pretty JSON with a trailing newline; stable byte-for-byte.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// `NA` or the value rounded to `precision` decimals.
pub fn cell<T: Scalar>(value: Option<T>, precision: usize) -> String {
    match value {
        Some(v) => format!("{:.*}", precision, v.to_f64_lossy()),
        None => "NA".into(),
    }
}

fn rate_cell(r: Rate, precision: usize) -> String {
    cell(r.as_f64(), precision)
}

/// The report as table rows: summary, per error type, per collection,
/// misclassifications. Each table starts with its header row.
pub fn report_tables<T: Scalar>(
    r: &MetricsReport<T>,
    precision: usize,
) -> Vec<(&'static str, Vec<Vec<String>>)> {
    let c = |v: Option<T>| cell(v, precision);
    let rc = |v: Rate| rate_cell(v, precision);
    let scores =
        |s: &CorrectionScores<T>| vec![c(s.rouge1), c(s.bertscore), c(s.bleurt), c(s.aggscore)];

    let mut summary = vec![vec![
        "Run".to_string(),
        "Flag Acc".into(),
        "Sentence Acc".into(),
        "FPR".into(),
        "ROUGE-1".into(),
        "BERTScore".into(),
        "BLEURT".into(),
        "AggScore".into(),
    ]];
    let mut row = vec![
        format!("{} {}", r.provenance.model, r.provenance.strategy)
            .trim()
            .to_string(),
        rc(r.flag_accuracy),
        rc(r.sentence_accuracy),
        rc(r.fpr),
    ];
    row.extend(scores(&r.corrections.mean));
    summary.push(row);

    let mut types = vec![vec![
        "Error type".to_string(),
        "Flag recall".into(),
        "Sentence recall".into(),
        "ROUGE-1".into(),
        "BERTScore".into(),
        "BLEURT".into(),
        "AggScore".into(),
    ]];
    for t in &r.by_error_type {
        let name = t.error_type.map_or("Unknown", |e| e.label());
        let mut row = vec![
            format!("{name} ({})", t.n),
            rc(t.flag_recall),
            rc(t.sentence_recall),
        ];
        row.extend(scores(&t.corrections));
        types.push(row);
    }

    let mut subsets = vec![vec![
        "Collection".to_string(),
        "Flag Acc".into(),
        "Sentence Acc".into(),
        "ROUGE-1".into(),
        "AggScore".into(),
    ]];
    for s in &r.by_subset {
        subsets.push(vec![
            format!("{} ({})", s.collection, s.n),
            rc(s.flag_accuracy),
            rc(s.sentence_accuracy),
            c(s.corrections.rouge1),
            c(s.corrections.aggscore),
        ]);
    }

    let mut miss = vec![vec![
        "Task".to_string(),
        "Category".into(),
        "Count".into(),
        "Rate".into(),
    ]];
    for (cat, rate) in &r.misclassification {
        miss.push(vec![
            format!("{:?}", cat.task()),
            format!("{cat:?}"),
            rate.num.to_string(),
            rc(*rate),
        ]);
    }

    vec![
        ("summary", summary),
        ("error_types", types),
        ("subsets", subsets),
        ("misclassification", miss),
    ]
}

pub fn render_text<T: Scalar>(r: &MetricsReport<T>, precision: usize) -> String {
    report_tables(r, precision)
        .iter()
        .map(|(_, rows)| render_aligned(rows))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_tsv(rows: &[Vec<String>]) -> String {
    rows.iter().map(|r| r.join("\t") + "\n").collect()
}

/// Left-aligns the first column and right-aligns the rest.
pub fn render_aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            if c > 0 {
                line.push_str("  ");
            }
            let pad = widths[c] - cell.chars().count();
            if c == 0 {
                line.push_str(cell);
                line.extend(std::iter::repeat_n(' ', pad));
            } else {
                line.extend(std::iter::repeat_n(' ', pad));
                line.push_str(cell);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow<T> {
    pub metric: String,
    pub n: usize,
    pub a: Option<T>,
    pub b: Option<T>,
    pub delta: Option<T>,
    pub p_value: Option<T>,
}

/// Per-metric deltas between two reports over their shared notes, with a
/// paired bootstrap p-value for "a beats b" when `iterations > 0`.
pub fn compare_reports<T: Scalar>(
    a: &MetricsReport<T>,
    b: &MetricsReport<T>,
    iterations: usize,
    seed: u64,
) -> Vec<ComparisonRow<T>> {
    let b_notes: BTreeMap<&str, &NoteRecord<T>> =
        b.per_note.iter().map(|n| (n.note_id.as_str(), n)).collect();
    let shared: Vec<(&NoteRecord<T>, &NoteRecord<T>)> = a
        .per_note
        .iter()
        .filter_map(|n| Some((n, *b_notes.get(n.note_id.as_str())?)))
        .collect();
    let bit = |x: bool| if x { T::one() } else { T::zero() };
    type Extract<T> = Box<dyn Fn(&NoteRecord<T>) -> Option<T>>;
    let metrics: Vec<(&str, Extract<T>)> = vec![
        (
            "flag_accuracy",
            Box::new(move |n: &NoteRecord<T>| Some(bit(n.flag_correct))),
        ),
        (
            "sentence_accuracy",
            Box::new(move |n: &NoteRecord<T>| Some(bit(n.sentence_correct))),
        ),
        (
            "rouge1",
            Box::new(|n: &NoteRecord<T>| n.corrections?.rouge1),
        ),
        (
            "aggscore",
            Box::new(|n: &NoteRecord<T>| n.corrections?.aggscore),
        ),
    ];
    metrics
        .into_iter()
        .map(|(name, f)| {
            let (xs, ys): (Vec<T>, Vec<T>) = shared
                .iter()
                .filter_map(|(x, y)| Some((f(x)?, f(y)?)))
                .unzip();
            let mean = |v: &[T]| {
                (!v.is_empty())
                    .then(|| v.iter().fold(T::zero(), |s, x| s + *x) / T::from_count(v.len()))
            };
            let (ma, mb) = (mean(&xs), mean(&ys));
            let p_value = (iterations > 0)
                .then(|| {
                    paired_bootstrap(&xs, &ys, iterations, seed)
                        .ok()
                        .map(|r| r.p_value)
                })
                .flatten();
            ComparisonRow {
                metric: name.to_string(),
                n: xs.len(),
                a: ma,
                b: mb,
                delta: ma.zip(mb).map(|(x, y)| x - y),
                p_value,
            }
        })
        .collect()
}

pub fn comparison_table<T: Scalar>(
    rows: &[ComparisonRow<T>],
    precision: usize,
) -> Vec<Vec<String>> {
    let mut out = vec![vec![
        "Metric".to_string(),
        "n".into(),
        "A".into(),
        "B".into(),
        "Delta".into(),
        "p".into(),
    ]];
    for r in rows {
        out.push(vec![
            r.metric.clone(),
            r.n.to_string(),
            cell(r.a, precision),
            cell(r.b, precision),
            cell(r.delta, precision),
            cell(r.p_value, precision),
        ]);
    }
    out
}
