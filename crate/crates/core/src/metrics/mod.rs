//! Detection metrics, correction scores and significance testing.

mod bootstrap;
mod rouge;
mod scorer;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ClinicalNote, Collection, ErrorType};
use crate::parsing::Prediction;
use crate::scalar::Rate;

pub use bootstrap::{paired_bootstrap, BootstrapResult, DEFAULT_ITERATIONS};
pub use rouge::{rouge1_f1, rouge1_f1_tokens};
pub use scorer::{
    agg_score, score_corrections, CorrectionScores, CorrectionSummary, HttpScorer, NaPolicy,
    NoteCorrection, ScorerError, SemanticScorer, SemanticScores,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("{golds} gold labels but {preds} predictions")]
    Misalignment { golds: usize, preds: usize },
    #[error("no prediction for note `{0}`")]
    MissingPrediction(String),
    #[error("duplicate prediction for note `{0}`")]
    DuplicatePrediction(String),
    #[error("score vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least two paired observations")]
    TooFewObservations,
}

/// The gold side of a note, as scoring sees it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub note_id: String,
    pub collection: Collection,
    pub flag: bool,
    pub sentence_id: Option<String>,
    pub correction: Option<String>,
    pub error_type: Option<ErrorType>,
}

impl From<&ClinicalNote> for GoldLabel {
    fn from(n: &ClinicalNote) -> Self {
        Self {
            note_id: n.note_id.clone(),
            collection: n.collection,
            flag: n.error_flag,
            sentence_id: n.error_sentence_id.clone(),
            correction: n.gold_correction.clone(),
            error_type: n.error_type,
        }
    }
}

pub fn gold_labels<'a>(notes: impl IntoIterator<Item = &'a ClinicalNote>) -> Vec<GoldLabel> {
    notes.into_iter().map(GoldLabel::from).collect()
}

/// Pairs every gold label with the prediction for the same note, in gold
/// order.
pub fn align<'a>(
    golds: &'a [GoldLabel],
    preds: &'a [Prediction],
) -> Result<Vec<(&'a GoldLabel, &'a Prediction)>, MetricsError> {
    if golds.len() != preds.len() {
        return Err(MetricsError::Misalignment {
            golds: golds.len(),
            preds: preds.len(),
        });
    }
    let mut by_id: HashMap<&str, &Prediction> = HashMap::with_capacity(preds.len());
    for p in preds {
        if by_id.insert(p.note_id.as_str(), p).is_some() {
            return Err(MetricsError::DuplicatePrediction(p.note_id.clone()));
        }
    }
    golds
        .iter()
        .map(|g| {
            by_id
                .get(g.note_id.as_str())
                .map(|p| (g, *p))
                .ok_or_else(|| MetricsError::MissingPrediction(g.note_id.clone()))
        })
        .collect()
}

/// True when the prediction gets the sentence-level decision right.
pub fn sentence_correct(g: &GoldLabel, p: &Prediction) -> bool {
    match (g.flag, p.flag) {
        (false, false) => true,
        (true, true) => g.sentence_id.is_some() && g.sentence_id == p.sentence_id,
        _ => false,
    }
}

/// Flag-level confusion counts; the positive class is "contains an error".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn accuracy(&self) -> Rate {
        Rate::new(self.tp + self.tn, self.total())
    }

    pub fn recall(&self) -> Rate {
        Rate::new(self.tp, self.tp + self.fn_)
    }

    pub fn fpr(&self) -> Rate {
        Rate::new(self.fp, self.fp + self.tn)
    }
}

pub fn confusion(
    golds: &[GoldLabel],
    preds: &[Prediction],
) -> Result<ConfusionCounts, MetricsError> {
    let mut c = ConfusionCounts::default();
    for (g, p) in align(golds, preds)? {
        match (g.flag, p.flag) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(c)
}

pub fn flag_accuracy(golds: &[GoldLabel], preds: &[Prediction]) -> Result<Rate, MetricsError> {
    Ok(confusion(golds, preds)?.accuracy())
}

pub fn sentence_accuracy(golds: &[GoldLabel], preds: &[Prediction]) -> Result<Rate, MetricsError> {
    let pairs = align(golds, preds)?;
    let hits = pairs.iter().filter(|(g, p)| sentence_correct(g, p)).count();
    Ok(Rate::new(hits, pairs.len()))
}

/// Share of error-free notes that were flagged. NA when there are none.
pub fn fpr(golds: &[GoldLabel], preds: &[Prediction]) -> Result<Rate, MetricsError> {
    Ok(confusion(golds, preds)?.fpr())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RecallPair {
    /// Error notes that were flagged.
    pub flag: Rate,
    /// Error notes whose erroneous sentence was identified.
    pub sentence: Rate,
}

fn tally<'a>(pairs: impl Iterator<Item = (&'a GoldLabel, &'a Prediction)>) -> RecallPair {
    let (mut n, mut flagged, mut located) = (0, 0, 0);
    for (g, p) in pairs {
        n += 1;
        flagged += usize::from(p.flag);
        located += usize::from(sentence_correct(g, p));
    }
    RecallPair {
        flag: Rate::new(flagged, n),
        sentence: Rate::new(located, n),
    }
}

/// Recall over error-present notes. NA when there are none.
pub fn recall_error_present(
    golds: &[GoldLabel],
    preds: &[Prediction],
) -> Result<RecallPair, MetricsError> {
    Ok(tally(
        align(golds, preds)?.into_iter().filter(|(g, _)| g.flag),
    ))
}

/// Recall per error type; error notes without a type are keyed `None`.
pub fn recall_by_type(
    golds: &[GoldLabel],
    preds: &[Prediction],
) -> Result<BTreeMap<Option<ErrorType>, RecallPair>, MetricsError> {
    let pairs = align(golds, preds)?;
    let mut types: Vec<Option<ErrorType>> = pairs
        .iter()
        .filter(|(g, _)| g.flag)
        .map(|(g, _)| g.error_type)
        .collect();
    types.sort();
    types.dedup();
    Ok(types
        .into_iter()
        .map(|t| {
            let subset = pairs
                .iter()
                .copied()
                .filter(|(g, _)| g.flag && g.error_type == t);
            (t, tally(subset))
        })
        .collect())
}
