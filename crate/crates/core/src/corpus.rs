//! Corpus records in the MEDEC layout: loading, validation, segmentation,
//! snapshots and split statistics.
//!
//! A note is either correct (`error_flag = 0`) or carries exactly one
//! erroneous sentence together with its gold correction. Delimited source
//! files are mapped onto [`ClinicalNote`] through a configurable
//! [`ColumnSchema`]; the default schema follows the public MEDEC CSV release:
//!
//! | field               | column                |
//! |---------------------|-----------------------|
//! | note id             | `Text ID`             |
//! | segmented sentences | `Sentences`           |
//! | error flag          | `Error Flag`          |
//! | error type          | `Error Type` (opt.)   |
//! | error sentence id   | `Error Sentence ID`   |
//! | corrected sentence  | `Corrected Sentence`  |
//!
//! Missing-value markers (`NA`, empty cells, ...) become absent fields and a
//! `-1` error sentence id is treated as absent.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Collection {
    #[serde(rename = "MS")]
    Ms,
    #[serde(rename = "UW")]
    Uw,
}

impl Collection {
    pub const ALL: [Collection; 2] = [Collection::Ms, Collection::Uw];

    /// Guesses the collection from ids such as `ms-train-12` or `uw-test-3`.
    pub fn from_note_id(id: &str) -> Option<Self> {
        let lower = id.trim().to_ascii_lowercase();
        if lower.starts_with("ms") {
            Some(Collection::Ms)
        } else if lower.starts_with("uw") {
            Some(Collection::Uw)
        } else {
            None
        }
    }
}

impl fmt::Display for Collection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Collection::Ms => "MS",
            Collection::Uw => "UW",
        })
    }
}

impl FromStr for Collection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ms" => Ok(Collection::Ms),
            "uw" => Ok(Collection::Uw),
            other => Err(format!("unknown collection `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" | "training" => Ok(Split::Train),
            "validation" | "valid" | "val" | "dev" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ErrorType {
    Diagnosis,
    Management,
    Treatment,
    Pharmacotherapy,
    CausalOrganism,
}

impl ErrorType {
    pub const ALL: [ErrorType; 5] = [
        ErrorType::Diagnosis,
        ErrorType::Management,
        ErrorType::Treatment,
        ErrorType::Pharmacotherapy,
        ErrorType::CausalOrganism,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            ErrorType::Diagnosis => "Diagnosis",
            ErrorType::Management => "Management",
            ErrorType::Treatment => "Treatment",
            ErrorType::Pharmacotherapy => "Pharmacotherapy",
            ErrorType::CausalOrganism => "Causal Organism",
        }
    }
}

impl fmt::Display for ErrorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ErrorType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "diagnosis" => Ok(ErrorType::Diagnosis),
            "management" => Ok(ErrorType::Management),
            "treatment" => Ok(ErrorType::Treatment),
            "pharmacotherapy" => Ok(ErrorType::Pharmacotherapy),
            "causalorganism" => Ok(ErrorType::CausalOrganism),
            _ => Err(format!("unknown error type `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub text: String,
}

impl Sentence {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalNote {
    pub note_id: String,
    pub collection: Collection,
    pub split: Split,
    pub sentences: Vec<Sentence>,
    pub error_flag: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_sentence_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_correction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_type: Option<ErrorType>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InvariantViolation {
    #[error("note has no sentences")]
    NoSentences,
    #[error("duplicate sentence id `{0}`")]
    DuplicateSentenceId(String),
    #[error("error flag is set but error sentence id `{0:?}` names no sentence")]
    DanglingErrorSentenceId(Option<String>),
    #[error("error flag is 0 but error annotations are present")]
    AnnotationsOnCorrectNote,
}

impl ClinicalNote {
    pub fn sentence(&self, id: &str) -> Option<&Sentence> {
        self.sentences.iter().find(|s| s.id == id)
    }

    pub fn has_sentence(&self, id: &str) -> bool {
        self.sentence(id).is_some()
    }

    pub fn error_sentence(&self) -> Option<&Sentence> {
        self.error_sentence_id
            .as_deref()
            .and_then(|id| self.sentence(id))
    }

    pub fn validate(&self) -> Result<(), InvariantViolation> {
        if self.sentences.is_empty() {
            return Err(InvariantViolation::NoSentences);
        }
        let mut seen = HashSet::new();
        for s in &self.sentences {
            if !seen.insert(s.id.as_str()) {
                return Err(InvariantViolation::DuplicateSentenceId(s.id.clone()));
            }
        }
        if self.error_flag {
            match &self.error_sentence_id {
                Some(id) if seen.contains(id.as_str()) => {}
                other => return Err(InvariantViolation::DanglingErrorSentenceId(other.clone())),
            }
        } else if self.error_sentence_id.is_some()
            || self.gold_correction.is_some()
            || self.error_type.is_some()
        {
            return Err(InvariantViolation::AnnotationsOnCorrectNote);
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed delimited file {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {0}: invalid error flag `{1}`")]
    InvalidFlag(u64, String),
    #[error("row {0}: error sentence id does not refer to a sentence of the note")]
    DanglingErrorSentenceId(u64),
    #[error("duplicate note id `{0}`")]
    DuplicateNoteId(String),
    #[error("row {0}: {1}")]
    InvalidRow(u64, String),
    #[error("empty text")]
    EmptyText,
    #[error("snapshot {path} line {line}: {message}")]
    Snapshot {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// How sentence lines carry their ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IdMarker {
    /// `id|sentence`; falls back to positional ids when any line lacks a pipe.
    #[default]
    Pipe,
    /// `12 sentence` with a purely numeric leading token, as in the MEDEC
    /// `Sentences` column; falls back to positional ids.
    LeadingNumber,
    /// Always positional ids.
    None,
}

/// Maps file columns onto note fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSchema {
    pub delimiter: char,
    pub note_id: String,
    pub text: String,
    pub error_flag: String,
    pub error_sentence_id: String,
    pub corrected_sentence: String,
    pub error_type: Option<String>,
    pub collection: Option<String>,
    pub split: Option<String>,
    pub id_marker: IdMarker,
    pub missing_markers: Vec<String>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            delimiter: ',',
            note_id: "Text ID".into(),
            text: "Sentences".into(),
            error_flag: "Error Flag".into(),
            error_sentence_id: "Error Sentence ID".into(),
            corrected_sentence: "Corrected Sentence".into(),
            error_type: Some("Error Type".into()),
            collection: None,
            split: None,
            id_marker: IdMarker::LeadingNumber,
            missing_markers: ["NA", "N/A", "nan", "NaN", "None", "null", ""]
                .into_iter()
                .map(String::from)
                .collect(),
        }
    }
}

impl ColumnSchema {
    fn normalize(&self, raw: &str) -> Option<String> {
        let trimmed = raw.trim();
        if self.missing_markers.iter().any(|m| m.trim() == trimmed) {
            None
        } else {
            Some(trimmed.to_string())
        }
    }
}

/// Splits a note into `(sentence_id, text)` pairs, one per nonempty line.
/// Lines of the form `id|text` keep their ids; otherwise ids are `0, 1, ...`.
pub fn segment_text(raw_text: &str) -> Result<Vec<Sentence>, CorpusError> {
    segment_text_with(raw_text, IdMarker::Pipe)
}

pub fn segment_text_with(raw_text: &str, marker: IdMarker) -> Result<Vec<Sentence>, CorpusError> {
    let lines: Vec<&str> = raw_text
        .split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .filter(|l| !l.trim().is_empty())
        .collect();
    if lines.is_empty() {
        return Err(CorpusError::EmptyText);
    }

    let marked: Option<Vec<Sentence>> = match marker {
        IdMarker::Pipe => lines
            .iter()
            .map(|line| {
                let (id, text) = line.split_once('|')?;
                let id = id.trim();
                (!id.is_empty() && !id.contains(char::is_whitespace))
                    .then(|| Sentence::new(id, text))
            })
            .collect(),
        IdMarker::LeadingNumber => lines
            .iter()
            .map(|line| {
                let line = line.trim_start();
                let (id, text) = line.split_once(char::is_whitespace)?;
                id.chars()
                    .all(|c| c.is_ascii_digit())
                    .then(|| Sentence::new(id, text.trim_start()))
            })
            .collect(),
        IdMarker::None => None,
    };

    let sentences = marked.unwrap_or_else(|| {
        lines
            .iter()
            .enumerate()
            .map(|(i, line)| Sentence::new(i.to_string(), *line))
            .collect()
    });
    Ok(sentences)
}

/// Normalizes a sentence id read from a file: `"3.0"` becomes `"3"`.
fn normalize_sentence_id(raw: &str) -> String {
    let t = raw.trim();
    if let Some(int_part) = t.strip_suffix(".0") {
        if !int_part.is_empty() && int_part.chars().all(|c| c.is_ascii_digit()) {
            return int_part.to_string();
        }
    }
    t.to_string()
}

fn parse_flag(raw: &str) -> Option<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "0" | "0.0" | "false" => Some(false),
        "1" | "1.0" | "true" => Some(true),
        _ => None,
    }
}

/// One source file and the split/collection its rows belong to when the
/// schema does not name a column for them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusFile {
    pub path: PathBuf,
    #[serde(default)]
    pub split: Option<Split>,
    #[serde(default)]
    pub collection: Option<Collection>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub notes: Vec<ClinicalNote>,
    pub warnings: Vec<String>,
}

impl Corpus {
    pub fn new(notes: Vec<ClinicalNote>) -> Self {
        Self {
            notes,
            warnings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    pub fn get(&self, note_id: &str) -> Option<&ClinicalNote> {
        self.notes.iter().find(|n| n.note_id == note_id)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ClinicalNote> {
        self.notes.iter().filter(move |n| n.split == split)
    }

    pub fn id_map(&self) -> HashMap<&str, &ClinicalNote> {
        self.notes.iter().map(|n| (n.note_id.as_str(), n)).collect()
    }

    /// Content hash over the canonical serialization of every note.
    pub fn fingerprint(&self) -> String {
        fingerprint_notes(&self.notes)
    }
}

pub fn fingerprint_notes(notes: &[ClinicalNote]) -> String {
    let mut buf = Vec::new();
    for note in notes {
        serde_json::to_writer(&mut buf, note).expect("notes serialize");
        buf.push(b'\n');
    }
    sha256_hex(buf)
}

/// Loads one delimited file. `split`/`collection` fill in for columns the
/// schema leaves unmapped.
pub fn load_corpus(
    path: &Path,
    schema: &ColumnSchema,
    split: Option<Split>,
    collection: Option<Collection>,
) -> Result<Corpus, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(u8::try_from(schema.delimiter).map_err(|_| {
            CorpusError::InvalidRow(0, format!("delimiter `{}` is not ASCII", schema.delimiter))
        })?)
        .flexible(false)
        .from_path(path)
        .map_err(|source| CorpusError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    let headers = reader
        .headers()
        .map_err(|source| CorpusError::Csv {
            path: path.to_path_buf(),
            source,
        })?
        .clone();
    let col = |name: &str| -> Result<usize, CorpusError> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CorpusError::MissingColumn(name.to_string()))
    };
    let optional_col = |name: &Option<String>| -> Result<Option<usize>, CorpusError> {
        match name {
            Some(n) => Ok(headers.iter().position(|h| h.trim() == n.as_str())),
            None => Ok(None),
        }
    };

    let id_col = col(&schema.note_id)?;
    let text_col = col(&schema.text)?;
    let flag_col = col(&schema.error_flag)?;
    let sid_col = headers
        .iter()
        .position(|h| h.trim() == schema.error_sentence_id);
    let corr_col = headers
        .iter()
        .position(|h| h.trim() == schema.corrected_sentence);
    let type_col = optional_col(&schema.error_type)?;
    let coll_col = match &schema.collection {
        Some(name) => Some(col(name)?),
        None => None,
    };
    let split_col = match &schema.split {
        Some(name) => Some(col(name)?),
        None => None,
    };

    let mut corpus = Corpus::default();
    let mut ids = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|source| CorpusError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let row = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record.get(i).unwrap_or("");
        let opt_field = |i: Option<usize>| i.and_then(|i| schema.normalize(field(i)));

        let note_id = schema
            .normalize(field(id_col))
            .ok_or_else(|| CorpusError::InvalidRow(row, "missing note id".into()))?;
        if !ids.insert(note_id.clone()) {
            return Err(CorpusError::DuplicateNoteId(note_id));
        }

        let raw_flag = field(flag_col);
        let error_flag =
            parse_flag(raw_flag).ok_or_else(|| CorpusError::InvalidFlag(row, raw_flag.into()))?;

        let sentences = segment_text_with(field(text_col), schema.id_marker)
            .map_err(|_| CorpusError::InvalidRow(row, "note text is empty".into()))?;

        let collection = match coll_col {
            Some(i) => field(i)
                .parse()
                .map_err(|e: String| CorpusError::InvalidRow(row, e))?,
            None => collection
                .or_else(|| Collection::from_note_id(&note_id))
                .ok_or_else(|| {
                    CorpusError::InvalidRow(row, format!("cannot infer collection of `{note_id}`"))
                })?,
        };
        let split = match split_col {
            Some(i) => field(i)
                .parse()
                .map_err(|e: String| CorpusError::InvalidRow(row, e))?,
            None => split.ok_or_else(|| {
                CorpusError::InvalidRow(row, "split is neither a column nor configured".into())
            })?,
        };

        let mut error_sentence_id = opt_field(sid_col)
            .map(|s| normalize_sentence_id(&s))
            .filter(|s| s != "-1");
        let mut gold_correction = opt_field(corr_col);
        let mut error_type = match opt_field(type_col) {
            Some(t) => Some(
                t.parse()
                    .map_err(|e: String| CorpusError::InvalidRow(row, e))?,
            ),
            None => None,
        };

        if error_flag {
            match &error_sentence_id {
                Some(id) if sentences.iter().any(|s| &s.id == id) => {}
                _ => return Err(CorpusError::DanglingErrorSentenceId(row)),
            }
        } else if error_sentence_id.is_some() || gold_correction.is_some() || error_type.is_some() {
            corpus.warnings.push(format!(
                "row {row} ({note_id}): annotations on a correct note were dropped"
            ));
            error_sentence_id = None;
            gold_correction = None;
            error_type = None;
        }

        let note = ClinicalNote {
            note_id,
            collection,
            split,
            sentences,
            error_flag,
            error_sentence_id,
            gold_correction,
            error_type,
        };
        note.validate()
            .map_err(|v| CorpusError::InvalidRow(row, v.to_string()))?;
        if let (Some(sentence), Some(correction)) = (note.error_sentence(), &note.gold_correction) {
            if sentence.text.trim() == correction.trim() {
                corpus.warnings.push(format!(
                    "{}: gold correction equals the erroneous sentence",
                    note.note_id
                ));
            }
        }
        corpus.notes.push(note);
    }
    for w in &corpus.warnings {
        tracing::warn!("{w}");
    }
    Ok(corpus)
}

/// Loads and concatenates several files, rejecting ids repeated across them.
pub fn load_files(files: &[CorpusFile], schema: &ColumnSchema) -> Result<Corpus, CorpusError> {
    let mut all = Corpus::default();
    let mut ids = HashSet::new();
    for file in files {
        let part = load_corpus(&file.path, schema, file.split, file.collection)?;
        for note in &part.notes {
            if !ids.insert(note.note_id.clone()) {
                return Err(CorpusError::DuplicateNoteId(note.note_id.clone()));
            }
        }
        all.notes.extend(part.notes);
        all.warnings.extend(part.warnings);
    }
    Ok(all)
}

pub const SNAPSHOT_FORMAT: &str = "medcorr-corpus";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotHeader {
    format: String,
    version: u32,
    count: usize,
    fingerprint: String,
}

/// Writes a canonical line-delimited snapshot: a header line followed by one
/// note per line.
pub fn write_snapshot(path: &Path, notes: &[ClinicalNote]) -> Result<(), CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    let header = SnapshotHeader {
        format: SNAPSHOT_FORMAT.into(),
        version: SNAPSHOT_VERSION,
        count: notes.len(),
        fingerprint: fingerprint_notes(notes),
    };
    serde_json::to_writer(&mut out, &header).map_err(|e| io(e.into()))?;
    out.write_all(b"\n").map_err(io)?;
    for note in notes {
        serde_json::to_writer(&mut out, note).map_err(|e| io(e.into()))?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_snapshot(path: &Path) -> Result<Corpus, CorpusError> {
    let snap = |line: usize, message: String| CorpusError::Snapshot {
        path: path.to_path_buf(),
        line,
        message,
    };
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| snap(1, "missing header".into()))?
        .map_err(|e| snap(1, e.to_string()))?;
    let header: SnapshotHeader =
        serde_json::from_str(&header_line).map_err(|e| snap(1, e.to_string()))?;
    if header.format != SNAPSHOT_FORMAT || header.version != SNAPSHOT_VERSION {
        return Err(snap(
            1,
            format!("unsupported snapshot {} v{}", header.format, header.version),
        ));
    }
    let mut notes = Vec::with_capacity(header.count);
    let mut ids = HashSet::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| snap(lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let note: ClinicalNote =
            serde_json::from_str(&line).map_err(|e| snap(lineno, e.to_string()))?;
        note.validate().map_err(|e| snap(lineno, e.to_string()))?;
        if !ids.insert(note.note_id.clone()) {
            return Err(CorpusError::DuplicateNoteId(note.note_id));
        }
        notes.push(note);
    }
    if notes.len() != header.count || fingerprint_notes(&notes) != header.fingerprint {
        return Err(snap(1, "snapshot content does not match its header".into()));
    }
    Ok(Corpus::new(notes))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub note_count: usize,
    pub error_count: usize,
    pub by_type: BTreeMap<ErrorType, usize>,
}

impl CellStats {
    /// `None` for an empty cell.
    pub fn error_rate(&self) -> Option<f64> {
        (self.note_count > 0).then(|| self.error_count as f64 / self.note_count as f64)
    }

    fn absorb(&mut self, other: &CellStats) {
        self.note_count += other.note_count;
        self.error_count += other.error_count;
        for (t, c) in &other.by_type {
            *self.by_type.entry(*t).or_default() += c;
        }
    }
}

/// Note and error counts per (split, collection) cell.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusStats {
    pub cells: BTreeMap<(Split, Collection), CellStats>,
}

impl CorpusStats {
    pub fn cell(&self, split: Split, collection: Collection) -> CellStats {
        self.cells
            .get(&(split, collection))
            .cloned()
            .unwrap_or_default()
    }

    pub fn split_total(&self, split: Split) -> CellStats {
        let mut total = CellStats::default();
        for ((s, _), cell) in &self.cells {
            if *s == split {
                total.absorb(cell);
            }
        }
        total
    }

    pub fn collection_total(&self, collection: Collection) -> CellStats {
        let mut total = CellStats::default();
        for ((_, c), cell) in &self.cells {
            if *c == collection {
                total.absorb(cell);
            }
        }
        total
    }

    pub fn total(&self) -> CellStats {
        let mut total = CellStats::default();
        for cell in self.cells.values() {
            total.absorb(cell);
        }
        total
    }

    /// Plain-text table in the shape of the usual dataset overview: one row
    /// per collection, one column per split, plus error prevalence rows.
    pub fn render(&self) -> String {
        let fmt_count = |c: &CellStats| {
            if c.note_count == 0 {
                "--".to_string()
            } else {
                c.note_count.to_string()
            }
        };
        let fmt_share = |n: usize, c: &CellStats| match c.error_rate() {
            Some(_) => format!("{n} ({:.1}%)", 100.0 * n as f64 / c.note_count as f64),
            None => "--".to_string(),
        };
        let mut rows: Vec<Vec<String>> = vec![vec![
            "Collection".into(),
            "Training".into(),
            "Validation".into(),
            "Test".into(),
            "Total".into(),
        ]];
        for coll in Collection::ALL {
            let mut row = vec![coll.to_string()];
            for split in Split::ALL {
                row.push(fmt_count(&self.cell(split, coll)));
            }
            row.push(fmt_count(&self.collection_total(coll)));
            rows.push(row);
        }
        let mut total_row = vec!["All".to_string()];
        for split in Split::ALL {
            total_row.push(fmt_count(&self.split_total(split)));
        }
        total_row.push(fmt_count(&self.total()));
        rows.push(total_row);

        let mut without = vec!["# texts without errors".to_string()];
        let mut with = vec!["# texts with errors".to_string()];
        let columns: Vec<CellStats> = Split::ALL
            .iter()
            .map(|s| self.split_total(*s))
            .chain(std::iter::once(self.total()))
            .collect();
        for c in &columns {
            without.push(fmt_share(c.note_count - c.error_count, c));
            with.push(fmt_share(c.error_count, c));
        }
        rows.push(without);
        rows.push(with);
        crate::report::render_aligned(&rows)
    }
}

pub fn corpus_stats(notes: &[ClinicalNote]) -> CorpusStats {
    let mut stats = CorpusStats::default();
    for note in notes {
        let cell = stats
            .cells
            .entry((note.split, note.collection))
            .or_default();
        cell.note_count += 1;
        if note.error_flag {
            cell.error_count += 1;
            if let Some(t) = note.error_type {
                *cell.by_type.entry(t).or_default() += 1;
            }
        }
    }
    stats
}
