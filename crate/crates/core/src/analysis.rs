//! Per-type and per-collection breakdowns, and the misclassification
//! taxonomy.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Collection, ErrorType};
use crate::metrics::{
    align, sentence_correct, CorrectionScores, CorrectionSummary, GoldLabel, MetricsError,
};
use crate::parsing::Prediction;
use crate::scalar::{Rate, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Task {
    FlagDetection,
    SentenceDetection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    OverCorrection,
    FalseNegativeFlag,
    NearMiss,
    WrongSentenceOther,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::OverCorrection,
        Category::FalseNegativeFlag,
        Category::NearMiss,
        Category::WrongSentenceOther,
    ];

    pub fn task(&self) -> Task {
        match self {
            Category::OverCorrection | Category::FalseNegativeFlag => Task::FlagDetection,
            Category::NearMiss | Category::WrongSentenceOther => Task::SentenceDetection,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MisclassificationLabel {
    pub note_id: String,
    pub task: Task,
    pub category: Category,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Categorization {
    pub labels: Vec<MisclassificationLabel>,
    /// Count per category over the full evaluated set.
    pub rates: BTreeMap<Category, Rate>,
}

/// Sentence ids at most `near_miss_distance` apart count as a near miss.
/// Ids that are not integers never do.
pub fn categorize(
    golds: &[GoldLabel],
    preds: &[Prediction],
    near_miss_distance: u64,
) -> Result<Categorization, MetricsError> {
    let pairs = align(golds, preds)?;
    let mut labels = Vec::new();
    for (g, p) in &pairs {
        if sentence_correct(g, p) {
            continue;
        }
        let gold_id = g.sentence_id.as_deref().unwrap_or("-");
        let pred_id = p.sentence_id.as_deref().unwrap_or("-");
        let (category, detail) = match (g.flag, p.flag) {
            (false, true) => (
                Category::OverCorrection,
                format!("flagged sentence {pred_id} of a correct note"),
            ),
            (true, false) => (
                Category::FalseNegativeFlag,
                format!("missed error in sentence {gold_id}"),
            ),
            _ => {
                let distance = match (gold_id.parse::<i64>(), pred_id.parse::<i64>()) {
                    (Ok(a), Ok(b)) => Some(a.abs_diff(b)),
                    _ => None,
                };
                let category = match distance {
                    Some(d) if d <= near_miss_distance => Category::NearMiss,
                    _ => Category::WrongSentenceOther,
                };
                (category, format!("gold {gold_id}, predicted {pred_id}"))
            }
        };
        labels.push(MisclassificationLabel {
            note_id: g.note_id.clone(),
            task: category.task(),
            category,
            detail,
        });
    }
    let rates = Category::ALL
        .iter()
        .map(|c| {
            (
                *c,
                Rate::new(
                    labels.iter().filter(|l| l.category == *c).count(),
                    pairs.len(),
                ),
            )
        })
        .collect();
    Ok(Categorization { labels, rates })
}

/// Externally supplied labels (note id -> category) for categories that
/// need human judgment. Read from a CSV with `note_id` and `category`
/// columns.
pub fn load_human_labels(path: &Path) -> Result<BTreeMap<String, String>, csv::Error> {
    #[derive(Deserialize)]
    struct Row {
        note_id: String,
        category: String,
    }
    let mut labels = BTreeMap::new();
    for row in csv::Reader::from_path(path)?.deserialize::<Row>() {
        let row = row?;
        labels.insert(
            row.note_id.trim().to_string(),
            row.category.trim().to_string(),
        );
    }
    Ok(labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeRow<T> {
    /// `None` for error notes with no recorded type.
    pub error_type: Option<ErrorType>,
    pub n: usize,
    pub flag_recall: Rate,
    pub sentence_recall: Rate,
    pub corrections: CorrectionScores<T>,
    pub n_scored: usize,
}

fn correction_lookup<T: Copy>(
    c: &CorrectionSummary<T>,
) -> BTreeMap<&str, Option<&CorrectionScores<T>>> {
    c.per_note
        .iter()
        .map(|n| (n.note_id.as_str(), n.scores.as_ref()))
        .collect()
}

/// One row per error type present among gold error notes.
pub fn by_error_type<T: Scalar>(
    golds: &[GoldLabel],
    preds: &[Prediction],
    corrections: &CorrectionSummary<T>,
) -> Result<Vec<TypeRow<T>>, MetricsError> {
    let pairs = align(golds, preds)?;
    let scores = correction_lookup(corrections);
    let mut groups: BTreeMap<Option<ErrorType>, Vec<(&GoldLabel, &Prediction)>> = BTreeMap::new();
    for (g, p) in pairs.into_iter().filter(|(g, _)| g.flag) {
        groups.entry(g.error_type).or_default().push((g, p));
    }
    Ok(groups
        .into_iter()
        .map(|(error_type, rows)| {
            let n = rows.len();
            let scored: Vec<&CorrectionScores<T>> = rows
                .iter()
                .filter_map(|(g, _)| scores.get(g.note_id.as_str()).copied().flatten())
                .collect();
            TypeRow {
                error_type,
                n,
                flag_recall: Rate::new(rows.iter().filter(|(_, p)| p.flag).count(), n),
                sentence_recall: Rate::new(
                    rows.iter().filter(|(g, p)| sentence_correct(g, p)).count(),
                    n,
                ),
                n_scored: scored.len(),
                corrections: CorrectionScores::mean(scored.into_iter()),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRow<T> {
    pub collection: Collection,
    pub n: usize,
    pub flag_accuracy: Rate,
    pub sentence_accuracy: Rate,
    pub corrections: CorrectionScores<T>,
}

/// One row per collection present.
pub fn by_subset<T: Scalar>(
    golds: &[GoldLabel],
    preds: &[Prediction],
    corrections: &CorrectionSummary<T>,
) -> Result<Vec<SubsetRow<T>>, MetricsError> {
    let pairs = align(golds, preds)?;
    let scores = correction_lookup(corrections);
    let mut groups: BTreeMap<Collection, Vec<(&GoldLabel, &Prediction)>> = BTreeMap::new();
    for (g, p) in pairs {
        groups.entry(g.collection).or_default().push((g, p));
    }
    Ok(groups
        .into_iter()
        .map(|(collection, rows)| {
            let n = rows.len();
            let scored = rows
                .iter()
                .filter_map(|(g, _)| scores.get(g.note_id.as_str()).copied().flatten());
            SubsetRow {
                collection,
                n,
                flag_accuracy: Rate::new(rows.iter().filter(|(g, p)| g.flag == p.flag).count(), n),
                sentence_accuracy: Rate::new(
                    rows.iter().filter(|(g, p)| sentence_correct(g, p)).count(),
                    n,
                ),
                corrections: CorrectionScores::mean(scored),
            }
        })
        .collect())
}
