//! Completion parsing under the `CORRECT` / `<id> <correction>` grammar.
//!
//! A completion is `Clean` when its trimmed text is `CORRECT` (any case) or
//! a single line whose first whitespace-delimited token is a sentence id of
//! the note, followed by a nonempty correction. Otherwise the recovery
//! ladder below is tried in order; a match is `Recovered`. Anything else is
//! `Failed`.
//!
//! Recovery ladder:
//! 1. drop markdown code fences
//! 2. drop an `Output:`, `Answer:` or `Final answer:` label
//! 3. strip wrapping quotes, backticks or `**`
//! 4. `CORRECT` followed by trailing punctuation
//! 5. a `Sentence`, `Sentence ID` or `ID` label before the id
//! 6. `3|`, `3:`, `3.`, `3)`, `[3]` or `(3)` as the id delimiter
//! 7. the first nonempty line of a multi-line answer
//! 8. numeric id normalization (`03` matches `3`)

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ClinicalNote;
use crate::prompting::CORRECT;

pub const PREDICTIONS_FORMAT: &str = "medcorr-predictions";
pub const PREDICTIONS_VERSION: u32 = 1;
/// Sentence id assigned to unparseable completions under
/// [`FailedParsePolicy::FlagError`]. Never matches a real id.
pub const UNPARSED_ID: &str = "__unparsed__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseStatus {
    Clean,
    Recovered,
    Failed,
}

/// How a `Failed` completion is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailedParsePolicy {
    /// Flag 1 with [`UNPARSED_ID`] and no correction.
    #[default]
    FlagError,
    /// Flag 0.
    FlagCorrect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub note_id: String,
    pub flag: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentence_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correction: Option<String>,
    pub raw_text: String,
    pub parse_status: ParseStatus,
}

impl Prediction {
    /// The answer in canonical grammar, or `None` for a failed parse.
    pub fn to_canonical_answer(&self) -> Option<String> {
        match (self.parse_status, self.flag) {
            (ParseStatus::Failed, _) => None,
            (_, false) => Some(CORRECT.to_string()),
            (_, true) => Some(format!(
                "{} {}",
                self.sentence_id.as_deref()?,
                self.correction.as_deref()?
            )),
        }
    }
}

enum Answer {
    Correct,
    Error { id: String, correction: String },
}

fn clean(text: &str, note: &ClinicalNote) -> Option<Answer> {
    if text.eq_ignore_ascii_case(CORRECT) {
        return Some(Answer::Correct);
    }
    if text.contains('\n') {
        return None;
    }
    let (id, rest) = text.split_once(char::is_whitespace)?;
    let rest = rest.trim();
    (note.has_sentence(id) && !rest.is_empty()).then(|| Answer::Error {
        id: id.to_string(),
        correction: rest.to_string(),
    })
}

static FENCE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^\s*```[\w-]*\s*$").unwrap());
static LABEL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^(?:final\s+answer|answer|output)\s*:\s*").unwrap());
static CORRECT_PUNCT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^correct\s*[.!]*$").unwrap());
static ID_LABEL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^(?:sentence\s+id|sentence|id)\s*[:#]?\s*").unwrap());
static ID_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^[\[(]?([A-Za-z0-9_-]+)[\])]?(?:\s*\|\s*|\s*[:.)]\s+|\s+)(\S.*)$").unwrap()
});

fn strip_wrapping(mut s: &str) -> &str {
    loop {
        let t = s.trim();
        let inner = [
            ("\"", "\""),
            ("'", "'"),
            ("`", "`"),
            ("**", "**"),
            ("\u{201c}", "\u{201d}"),
        ]
        .iter()
        .find_map(|(l, r)| {
            (t.len() >= l.len() + r.len())
                .then(|| t.strip_prefix(l)?.strip_suffix(r))
                .flatten()
        });
        match inner {
            Some(i) => s = i,
            None => return t,
        }
    }
}

/// Resolves `raw` to a sentence id of `note`, allowing leading zeros.
fn resolve_id(raw: &str, note: &ClinicalNote) -> Option<String> {
    if note.has_sentence(raw) {
        return Some(raw.to_string());
    }
    let n: u64 = raw.parse().ok()?;
    note.sentences
        .iter()
        .find(|s| s.id.parse::<u64>().ok() == Some(n))
        .map(|s| s.id.clone())
}

fn recover_line(line: &str, note: &ClinicalNote) -> Option<Answer> {
    let line = strip_wrapping(line);
    let line = strip_wrapping(&line[LABEL.find(line).map_or(0, |m| m.end())..]);
    if CORRECT_PUNCT.is_match(line) {
        return Some(Answer::Correct);
    }
    let line = &line[ID_LABEL.find(line).map_or(0, |m| m.end())..];
    let caps = ID_LINE.captures(line)?;
    let id = resolve_id(&caps[1], note)?;
    let correction = strip_wrapping(&caps[2]).trim();
    (!correction.is_empty()).then(|| Answer::Error {
        id,
        correction: correction.to_string(),
    })
}

fn recover(text: &str, note: &ClinicalNote) -> Option<Answer> {
    let unfenced = FENCE.replace_all(text, "");
    let unfenced = unfenced.trim();
    if !unfenced.contains('\n') {
        return recover_line(unfenced, note);
    }
    let first = unfenced.lines().find(|l| !l.trim().is_empty())?;
    // a label on its own line is followed by the answer
    if LABEL
        .find(first.trim())
        .is_some_and(|m| m.end() == first.trim().len())
    {
        let next = unfenced
            .lines()
            .skip_while(|l| *l != first)
            .skip(1)
            .find(|l| !l.trim().is_empty())?;
        return recover_line(next, note);
    }
    recover_line(first, note)
}

/// Parses a completion for `note`. Never fails; unparseable text becomes a
/// `Failed` prediction scored per `policy`.
pub fn parse_completion(
    raw_text: &str,
    note: &ClinicalNote,
    policy: FailedParsePolicy,
) -> Prediction {
    let trimmed = raw_text.trim();
    let (answer, status) = match clean(trimmed, note) {
        Some(a) => (Some(a), ParseStatus::Clean),
        None => match recover(trimmed, note) {
            Some(a) => (Some(a), ParseStatus::Recovered),
            None => (None, ParseStatus::Failed),
        },
    };
    let (flag, sentence_id, correction) = match answer {
        Some(Answer::Correct) => (false, None, None),
        Some(Answer::Error { id, correction }) => (true, Some(id), Some(correction)),
        None => match policy {
            FailedParsePolicy::FlagError => (true, Some(UNPARSED_ID.to_string()), None),
            FailedParsePolicy::FlagCorrect => (false, None, None),
        },
    };
    if status == ParseStatus::Failed {
        tracing::warn!(note_id = %note.note_id, ?policy, "unparseable completion");
    }
    Prediction {
        note_id: note.note_id.clone(),
        flag,
        sentence_id,
        correction,
        raw_text: raw_text.to_string(),
        parse_status: status,
    }
}

#[derive(Debug, Error)]
pub enum PredictionFileError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: expected {PREDICTIONS_FORMAT} v{PREDICTIONS_VERSION}, found {found}")]
    SchemaVersionMismatch { path: String, found: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionsHeader {
    pub format: String,
    pub version: u32,
    pub config_fingerprint: String,
    pub count: usize,
}

pub fn predictions_to_file(
    preds: &[Prediction],
    config_fingerprint: &str,
    path: &Path,
) -> Result<(), PredictionFileError> {
    let io = |source| PredictionFileError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    let header = PredictionsHeader {
        format: PREDICTIONS_FORMAT.into(),
        version: PREDICTIONS_VERSION,
        config_fingerprint: config_fingerprint.into(),
        count: preds.len(),
    };
    let mut line = |v: String| writeln!(out, "{v}").map_err(io);
    line(serde_json::to_string(&header).expect("header serializes"))?;
    for p in preds {
        line(serde_json::to_string(p).expect("prediction serializes"))?;
    }
    out.flush().map_err(io)
}

pub fn file_to_predictions(
    path: &Path,
) -> Result<(PredictionsHeader, Vec<Prediction>), PredictionFileError> {
    let p = path.display().to_string();
    let io = |source| PredictionFileError::Io {
        path: p.clone(),
        source,
    };
    let malformed = |line: usize, message: String| PredictionFileError::Malformed {
        path: p.clone(),
        line,
        message,
    };
    let mut lines = BufReader::new(File::open(path).map_err(io)?).lines();
    let head = lines
        .next()
        .ok_or_else(|| malformed(1, "missing header".into()))?
        .map_err(io)?;
    let raw: serde_json::Value =
        serde_json::from_str(&head).map_err(|e| malformed(1, e.to_string()))?;
    if raw["format"] != PREDICTIONS_FORMAT || raw["version"] != PREDICTIONS_VERSION {
        return Err(PredictionFileError::SchemaVersionMismatch {
            path: p.clone(),
            found: format!("{} v{}", raw["format"], raw["version"]),
        });
    }
    let header: PredictionsHeader =
        serde_json::from_value(raw).map_err(|e| malformed(1, e.to_string()))?;
    let mut preds = Vec::with_capacity(header.count);
    for (i, l) in lines.enumerate() {
        let l = l.map_err(io)?;
        if l.trim().is_empty() {
            continue;
        }
        preds.push(serde_json::from_str(&l).map_err(|e| malformed(i + 2, e.to_string()))?);
    }
    if preds.len() != header.count {
        return Err(malformed(
            0,
            format!(
                "header declares {} predictions, found {}",
                header.count,
                preds.len()
            ),
        ));
    }
    Ok((header, preds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::test_support::note;
    use crate::corpus::Split;
    use crate::prompting::gold_answer;

    fn five() -> ClinicalNote {
        note("ms-test-395", Split::Test, &["a", "b", "c", "d", "e"], None)
    }

    fn parse(raw: &str) -> Prediction {
        parse_completion(raw, &five(), FailedParsePolicy::default())
    }

    fn fields(p: &Prediction) -> (bool, Option<&str>, Option<&str>, ParseStatus) {
        (
            p.flag,
            p.sentence_id.as_deref(),
            p.correction.as_deref(),
            p.parse_status,
        )
    }

    #[test]
    fn clean_answers() {
        assert_eq!(
            fields(&parse("CORRECT")),
            (false, None, None, ParseStatus::Clean)
        );
        assert_eq!(
            fields(&parse("  correct\n")),
            (false, None, None, ParseStatus::Clean)
        );
        let fix = "Patient is diagnosed with hypertrophic cardiomyopathy after physical examination reveals a prominent A wave on the jugular venous pulse and a double apical impulse.";
        let p = parse(&format!("4 {fix}"));
        assert_eq!(fields(&p), (true, Some("4"), Some(fix), ParseStatus::Clean));
    }

    #[test]
    fn recovery_ladder() {
        let cases = [
            ("```\n3 Fixed.\n```", Some(("3", "Fixed."))),
            ("\"3 Fixed.\"", Some(("3", "Fixed."))),
            ("Output: 3 Fixed.", Some(("3", "Fixed."))),
            ("Answer:\n3 Fixed.", Some(("3", "Fixed."))),
            ("Sentence 3: Fixed.", Some(("3", "Fixed."))),
            ("Sentence ID 3: Fixed.", Some(("3", "Fixed."))),
            ("ID: 3 Fixed.", Some(("3", "Fixed."))),
            ("3|Fixed.", Some(("3", "Fixed."))),
            ("3: Fixed.", Some(("3", "Fixed."))),
            ("3. Fixed.", Some(("3", "Fixed."))),
            ("[3] Fixed.", Some(("3", "Fixed."))),
            ("03 Fixed.", Some(("3", "Fixed."))),
            ("3 Fixed.\nThe dose was wrong.", Some(("3", "Fixed."))),
            ("**3 Fixed.**", Some(("3", "Fixed."))),
            ("CORRECT.", None),
            ("`CORRECT`", None),
        ];
        for (raw, want) in cases {
            let p = parse(raw);
            assert_eq!(p.parse_status, ParseStatus::Recovered, "{raw:?}");
            match want {
                Some((id, c)) => {
                    assert!(p.flag, "{raw:?}");
                    assert_eq!(
                        (p.sentence_id.as_deref(), p.correction.as_deref()),
                        (Some(id), Some(c)),
                        "{raw:?}"
                    );
                }
                None => assert!(!p.flag, "{raw:?}"),
            }
            // grammar equivalence
            let again = parse(&p.to_canonical_answer().unwrap());
            assert_eq!(again.parse_status, ParseStatus::Clean);
            assert_eq!(
                (again.flag, &again.sentence_id, &again.correction),
                (p.flag, &p.sentence_id, &p.correction)
            );
        }
    }

    #[test]
    fn failures_follow_policy() {
        for raw in [
            "I think sentence 2 is wrong",
            "",
            "9 no such sentence",
            "3",
            "3.5 mg",
        ] {
            let p = parse(raw);
            assert_eq!(p.parse_status, ParseStatus::Failed, "{raw:?}");
            assert_eq!(
                (p.flag, p.sentence_id.as_deref(), p.correction.as_deref()),
                (true, Some(UNPARSED_ID), None)
            );
            let q = parse_completion(raw, &five(), FailedParsePolicy::FlagCorrect);
            assert!(!q.flag && q.sentence_id.is_none());
            assert_eq!(q.raw_text, raw);
        }
    }

    #[test]
    fn exact_ids_are_clean_but_padded_ids_are_not() {
        assert_eq!(parse("3 x").parse_status, ParseStatus::Clean);
        assert_eq!(parse("03 x").parse_status, ParseStatus::Recovered);
    }

    #[test]
    fn gold_answers_parse_back() {
        let n = note(
            "ms-train-1",
            Split::Train,
            &["a", "b"],
            Some(("1", "Fixed b.")),
        );
        let p = parse_completion(&gold_answer(&n).unwrap(), &n, FailedParsePolicy::default());
        assert_eq!(
            fields(&p),
            (true, Some("1"), Some("Fixed b."), ParseStatus::Clean)
        );
    }

    #[test]
    fn file_round_trip_and_version_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        let preds: Vec<Prediction> = ["CORRECT", "3 Fixed.", "nonsense", "Sentence 2: x"]
            .iter()
            .map(|r| parse(r))
            .collect();
        predictions_to_file(&preds, "fp", &path).unwrap();
        let (header, back) = file_to_predictions(&path).unwrap();
        assert_eq!(back, preds);
        assert_eq!(header.config_fingerprint, "fp");

        predictions_to_file(&[], "fp", &path).unwrap();
        assert!(file_to_predictions(&path).unwrap().1.is_empty());

        std::fs::write(&path, "{\"format\":\"medcorr-predictions\",\"version\":9,\"config_fingerprint\":\"\",\"count\":0}\n").unwrap();
        assert!(matches!(
            file_to_predictions(&path),
            Err(PredictionFileError::SchemaVersionMismatch { .. })
        ));
    }
}
