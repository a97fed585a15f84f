use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{align, GoldLabel, MetricsError};
use crate::http::{self, RetryPolicy};
use crate::parsing::Prediction;
use crate::scalar::Scalar;
use crate::text::Tokenizer;

use super::rouge::rouge1_f1;

/// Mean of the three correction scores; `None` unless all are present.
pub fn agg_score<T: Scalar>(
    rouge1: Option<T>,
    bertscore: Option<T>,
    bleurt: Option<T>,
) -> Option<T> {
    Some((rouge1? + bertscore? + bleurt?) / T::three())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CorrectionScores<T> {
    pub rouge1: Option<T>,
    pub bertscore: Option<T>,
    pub bleurt: Option<T>,
    pub aggscore: Option<T>,
}

impl<T: Scalar> CorrectionScores<T> {
    pub fn new(rouge1: Option<T>, bertscore: Option<T>, bleurt: Option<T>) -> Self {
        Self {
            rouge1,
            bertscore,
            bleurt,
            aggscore: agg_score(rouge1, bertscore, bleurt),
        }
    }

    fn zero(with_semantic: bool) -> Self {
        let s = with_semantic.then(T::zero);
        Self::new(Some(T::zero()), s, s)
    }

    /// Component-wise means over `items`, skipping NA entries.
    pub fn mean<'a>(items: impl Iterator<Item = &'a Self> + Clone) -> Self {
        fn avg<T: Scalar>(xs: impl Iterator<Item = Option<T>>) -> Option<T> {
            let (sum, n) = xs
                .flatten()
                .fold((T::zero(), 0usize), |(s, n), x| (s + x, n + 1));
            (n > 0).then(|| sum / T::from_count(n))
        }
        Self::new(
            avg(items.clone().map(|s| s.rouge1)),
            avg(items.clone().map(|s| s.bertscore)),
            avg(items.map(|s| s.bleurt)),
        )
    }
}

/// Which gold/prediction pairs enter the correction averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NaPolicy {
    /// Only pairs where both corrections exist.
    #[default]
    Exclude,
    /// Also score a missed correction as 0 on every component.
    Zero,
}

impl std::str::FromStr for NaPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exclude" => Ok(NaPolicy::Exclude),
            "zero" => Ok(NaPolicy::Zero),
            other => Err(format!(
                "unknown NA policy `{other}` (expected exclude or zero)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScorerError {
    #[error("semantic scorer unavailable: {0}")]
    Unavailable(String),
    #[error("semantic scorer returned {got} results for {expected} pairs")]
    CountMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemanticScores {
    pub bertscore: f64,
    pub bleurt: f64,
}

/// Neural similarity scores for (candidate, reference) pairs, in order.
pub trait SemanticScorer: Send + Sync {
    fn score(&self, pairs: &[(String, String)]) -> Result<Vec<SemanticScores>, ScorerError>;

    /// Model identifiers for report provenance.
    fn provenance(&self) -> Option<Value> {
        None
    }
}

/// Client for the scoring sidecar: `POST {base}/score`, `GET {base}/health`.
#[derive(Debug, Clone)]
pub struct HttpScorer {
    base_url: String,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
}

impl HttpScorer {
    pub fn new(base_url: impl Into<String>, timeout: Duration, retry: RetryPolicy) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            retry,
            client: http::client(timeout),
        }
    }

    fn parse(body: &Value, expected: usize) -> Result<Vec<SemanticScores>, ScorerError> {
        let list = body
            .as_array()
            .or_else(|| body["results"].as_array())
            .or_else(|| body["scores"].as_array())
            .ok_or_else(|| ScorerError::Unavailable("response has no result list".into()))?;
        if list.len() != expected {
            return Err(ScorerError::CountMismatch {
                expected,
                got: list.len(),
            });
        }
        list.iter()
            .map(|v| {
                serde_json::from_value(v.clone())
                    .map_err(|e| ScorerError::Unavailable(format!("malformed result: {e}")))
            })
            .collect()
    }
}

impl SemanticScorer for HttpScorer {
    fn score(&self, pairs: &[(String, String)]) -> Result<Vec<SemanticScores>, ScorerError> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let body = json!({
            "pairs": pairs
                .iter()
                .map(|(c, r)| json!({ "candidate": c, "reference": r }))
                .collect::<Vec<_>>()
        });
        let url = format!("{}/score", self.base_url);
        let (resp, _) = http::with_retry(&self.retry, || {
            http::send_json(&self.client, reqwest::Method::POST, &url, &[], Some(&body))
        });
        let resp = resp.map_err(|e| ScorerError::Unavailable(e.to_string()))?;
        Self::parse(&resp, pairs.len())
    }

    fn provenance(&self) -> Option<Value> {
        let url = format!("{}/health", self.base_url);
        http::send_json(&self.client, reqwest::Method::GET, &url, &[], None).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteCorrection<T> {
    pub note_id: String,
    /// `None` when the pair is NA.
    pub scores: Option<CorrectionScores<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionSummary<T> {
    /// One entry per gold error note, in gold order.
    pub per_note: Vec<NoteCorrection<T>>,
    pub mean: CorrectionScores<T>,
    pub n_scored: usize,
    pub n_na: usize,
    pub warnings: Vec<String>,
    pub scorer_provenance: Option<Value>,
}

/// Scores predicted corrections against gold corrections on error notes.
///
/// A pair is scored when the note has a gold correction and the prediction
/// flags an error with a correction. Under [`NaPolicy::Zero`] a gold
/// correction the prediction failed to supply scores 0. Semantic components
/// are NA without a scorer, or when the scorer fails.
pub fn score_corrections<T: Scalar>(
    golds: &[GoldLabel],
    preds: &[Prediction],
    scorer: Option<&dyn SemanticScorer>,
    tokenizer: &Tokenizer,
    na_policy: NaPolicy,
) -> Result<CorrectionSummary<T>, MetricsError> {
    enum Slot<'a> {
        Na,
        Missed,
        Pair(&'a str, &'a str),
    }
    let slots: Vec<(&str, Slot)> = align(golds, preds)?
        .into_iter()
        .filter(|(g, _)| g.flag)
        .map(|(g, p)| {
            let slot = match (&g.correction, p.flag, &p.correction) {
                (Some(r), true, Some(c)) => Slot::Pair(c, r),
                (Some(_), _, _) if na_policy == NaPolicy::Zero => Slot::Missed,
                _ => Slot::Na,
            };
            (g.note_id.as_str(), slot)
        })
        .collect();

    let mut warnings = Vec::new();
    let pairs: Vec<(String, String)> = slots
        .iter()
        .filter_map(|(_, s)| match s {
            Slot::Pair(c, r) => Some((c.to_string(), r.to_string())),
            _ => None,
        })
        .collect();
    let semantic: Option<Vec<SemanticScores>> = scorer.and_then(|s| match s.score(&pairs) {
        Ok(v) => Some(v),
        Err(e) => {
            tracing::warn!("{e}; semantic scores reported as NA");
            warnings.push(e.to_string());
            None
        }
    });
    let provenance = scorer
        .filter(|_| semantic.is_some())
        .and_then(|s| s.provenance());

    let mut next_pair = 0;
    let per_note: Vec<NoteCorrection<T>> = slots
        .into_iter()
        .map(|(id, slot)| {
            let scores = match slot {
                Slot::Na => None,
                Slot::Missed => Some(CorrectionScores::zero(semantic.is_some())),
                Slot::Pair(c, r) => {
                    let sem = semantic.as_ref().map(|v| v[next_pair]);
                    next_pair += 1;
                    Some(CorrectionScores::new(
                        // a correction with no word tokens shares nothing
                        rouge1_f1(c, r, tokenizer).or(Some(T::zero())),
                        sem.map(|s| T::from_f64_lossy(s.bertscore)),
                        sem.map(|s| T::from_f64_lossy(s.bleurt)),
                    ))
                }
            };
            NoteCorrection {
                note_id: id.to_string(),
                scores,
            }
        })
        .collect();

    let scored: Vec<&CorrectionScores<T>> =
        per_note.iter().filter_map(|n| n.scores.as_ref()).collect();
    let n_scored = scored.len();
    Ok(CorrectionSummary {
        mean: CorrectionScores::mean(scored.iter().copied()),
        n_na: per_note.len() - n_scored,
        n_scored,
        per_note,
        warnings,
        scorer_provenance: provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::super::test_support::{gold, pred};
    use super::*;

    struct Fixed(Result<f64, ScorerError>);

    impl SemanticScorer for Fixed {
        fn score(&self, pairs: &[(String, String)]) -> Result<Vec<SemanticScores>, ScorerError> {
            let v = self.0.clone()?;
            Ok(pairs
                .iter()
                .map(|_| SemanticScores {
                    bertscore: v,
                    bleurt: v,
                })
                .collect())
        }

        fn provenance(&self) -> Option<Value> {
            Some(json!({"bertscore": "test"}))
        }
    }

    #[test]
    fn agg_score_examples() {
        assert_eq!(agg_score(Some(0.6), Some(0.6), Some(0.6)), Some(0.6));
        let x: f64 = agg_score(Some(0.6655), Some(0.6832), Some(0.6635)).unwrap();
        assert!((x - 0.6707).abs() < 5e-5);
        let y: f64 = agg_score(Some(0.6327), Some(0.6627), Some(0.6465)).unwrap();
        assert!((y - 0.6473).abs() < 5e-5);
        assert_eq!(agg_score(Some(0.5), None, Some(0.5)), None::<f64>);
    }

    fn corpus() -> (Vec<GoldLabel>, Vec<Prediction>) {
        let g = vec![
            gold("a", Some("1")),
            gold("b", Some("1")),
            gold("c", Some("1")),
            gold("d", Some("2")),
            gold("e", None),
        ];
        let p = vec![
            pred("a", Some(("1", "fixed"))),
            pred("b", Some(("1", "fixed it"))),
            pred("c", Some(("1", "other"))),
            pred("d", None),
            pred("e", Some(("1", "fixed"))),
        ];
        (g, p)
    }

    #[test]
    fn exclude_policy_means() {
        let (g, p) = corpus();
        let s = score_corrections::<f64>(&g, &p, None, &Tokenizer::default(), NaPolicy::Exclude)
            .unwrap();
        // rouge: 1.0, 2*(1/2)(1)/(3/2) = 2/3, 0.0
        let m = s.mean.rouge1.unwrap();
        assert!((m - (1.0 + 2.0 / 3.0) / 3.0).abs() < 1e-15);
        assert_eq!((s.n_scored, s.n_na), (3, 1));
        assert_eq!(s.per_note.len(), 4);
        assert_eq!(s.mean.aggscore, None);
        assert_eq!(s.per_note[3].scores, None);
    }

    #[test]
    fn three_pair_mean() {
        let g = vec![
            gold("a", Some("1")),
            gold("b", Some("1")),
            gold("c", Some("1")),
        ];
        let p = vec![
            pred("a", Some(("1", "fixed"))),
            pred("b", Some(("1", "fixed x y"))),
            pred("c", Some(("1", "z"))),
        ];
        let s = score_corrections::<f64>(&g, &p, None, &Tokenizer::default(), NaPolicy::Exclude)
            .unwrap();
        let r: Vec<f64> = s
            .per_note
            .iter()
            .map(|n| n.scores.unwrap().rouge1.unwrap())
            .collect();
        assert_eq!(r, vec![1.0, 0.5, 0.0]);
        assert_eq!(s.mean.rouge1, Some(0.5));
    }

    #[test]
    fn zero_policy_counts_misses() {
        let (g, p) = corpus();
        let s =
            score_corrections::<f64>(&g, &p, None, &Tokenizer::default(), NaPolicy::Zero).unwrap();
        assert_eq!((s.n_scored, s.n_na), (4, 0));
        assert!((s.mean.rouge1.unwrap() - (1.0 + 2.0 / 3.0) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn scorer_fills_aggscore_and_failures_downgrade() {
        let (g, p) = corpus();
        let tok = Tokenizer::default();
        let ok = Fixed(Ok(0.5));
        let s = score_corrections::<f64>(&g, &p, Some(&ok), &tok, NaPolicy::Exclude).unwrap();
        let plain = score_corrections::<f64>(&g, &p, None, &tok, NaPolicy::Exclude).unwrap();
        assert_eq!(s.mean.rouge1, plain.mean.rouge1);
        assert_eq!(s.mean.bertscore, Some(0.5));
        assert!(s.mean.aggscore.is_some());
        assert!(s.scorer_provenance.is_some());

        let down = Fixed(Err(ScorerError::Unavailable("503".into())));
        let s = score_corrections::<f64>(&g, &p, Some(&down), &tok, NaPolicy::Exclude).unwrap();
        assert_eq!(s.mean.bertscore, None);
        assert_eq!(s.mean.rouge1, plain.mean.rouge1);
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn scorer_response_shapes() {
        let list = json!([{"bertscore": 0.9, "bleurt": 0.1}]);
        assert_eq!(HttpScorer::parse(&list, 1).unwrap()[0].bertscore, 0.9);
        let wrapped = json!({"results": [{"bertscore": 0.9, "bleurt": 0.1}]});
        assert_eq!(HttpScorer::parse(&wrapped, 1).unwrap()[0].bleurt, 0.1);
        assert!(matches!(
            HttpScorer::parse(&list, 2),
            Err(ScorerError::CountMismatch { .. })
        ));
    }

    proptest::proptest! {
        #[test]
        fn agg_is_idempotent(x in 0.0f64..1.0) {
            let a = agg_score(Some(x), Some(x), Some(x)).unwrap();
            proptest::prop_assert!((a - x).abs() <= 2.0 * f64::EPSILON);
        }
    }
}
