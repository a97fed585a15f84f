//! Instruction template, note rendering and exemplar selection.
//!
//! Prompt layout:
//!
//! ```text
//! <template>
//!
//! === EXAMPLE ===
//! <exemplar 1>
//! ...
//!
//! === INPUT ===
//! <target note>
//! ```

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ClinicalNote, Split};
use crate::retrieval::{ExemplarDocument, ExemplarIndex, Metric, RetrievalError};
use crate::scalar::Scalar;
use crate::util::{sha256_fields, sha256_hex};

pub const TEMPLATE: &str = include_str!("../assets/prompt_template.txt");
pub const EXEMPLAR_MARKER: &str = "=== EXAMPLE ===";
pub const INPUT_MARKER: &str = "=== INPUT ===";
pub const CORRECT: &str = "CORRECT";

pub fn template_hash() -> String {
    sha256_hex(TEMPLATE)
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("note `{0}` has no sentences")]
    EmptyNote(String),
    #[error("note `{0}` is flagged as erroneous but has no gold correction")]
    MissingGoldCorrection(String),
    #[error("retrieval-driven prompting needs an exemplar index")]
    IndexMissing,
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error("exemplar `{exemplar}` for note `{note_id}` is from the {split} split")]
    SeparationViolation {
        note_id: String,
        exemplar: String,
        split: Split,
    },
    #[error("retrieved note `{0}` is not in the exemplar pool")]
    UnknownExemplar(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

/// How SPR draws its exemplars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SprSampling {
    /// One draw per run, shared by every target note.
    #[default]
    PerRun,
    /// A fresh draw per target note, seeded from (run seed, note id).
    PerNote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PromptStrategy {
    ZeroShot,
    Spr {
        n: usize,
        seed: u64,
        #[serde(default)]
        sampling: SprSampling,
    },
    Rdp {
        n: usize,
    },
}

impl PromptStrategy {
    pub fn n_exemplars(&self) -> usize {
        match *self {
            PromptStrategy::ZeroShot => 0,
            PromptStrategy::Spr { n, .. } | PromptStrategy::Rdp { n } => n,
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        match self {
            PromptStrategy::Rdp { n: 0 } => Err(PromptError::InvalidStrategy(
                "rdp needs at least one exemplar".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            PromptStrategy::ZeroShot => "zero-shot".into(),
            PromptStrategy::Spr { n, .. } => format!("spr-{n}"),
            PromptStrategy::Rdp { n } => format!("rdp-{n}"),
        }
    }
}

/// Context limit applied to assembled prompts, estimated at four characters
/// per token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptOptions {
    pub context_budget_tokens: usize,
    pub chars_per_token: usize,
    pub metric: Metric,
}

impl Default for PromptOptions {
    fn default() -> Self {
        Self {
            context_budget_tokens: 128_000,
            chars_per_token: 4,
            metric: Metric::Cosine,
        }
    }
}

impl PromptOptions {
    fn estimate_tokens(&self, text: &str) -> usize {
        text.chars().count().div_ceil(self.chars_per_token.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub note_id: String,
    pub strategy: PromptStrategy,
    pub exemplar_note_ids: Vec<String>,
    /// Exemplars dropped because the pool was too small or the context
    /// budget was exceeded.
    pub clamped: usize,
    pub text: String,
    pub text_hash: String,
}

/// `id|text` per sentence, no trailing newline.
pub fn render_note(note: &ClinicalNote) -> String {
    let mut out = String::new();
    for (i, s) in note.sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&s.id);
        out.push('|');
        out.push_str(&s.text);
    }
    out
}

/// The answer a perfect model would give for `note`.
pub fn gold_answer(note: &ClinicalNote) -> Result<String, PromptError> {
    if !note.error_flag {
        return Ok(CORRECT.to_string());
    }
    match (&note.error_sentence_id, &note.gold_correction) {
        (Some(id), Some(c)) if !c.trim().is_empty() => Ok(format!("{id} {c}")),
        _ => Err(PromptError::MissingGoldCorrection(note.note_id.clone())),
    }
}

/// Rendered note followed by its gold answer line.
pub fn render_exemplar(note: &ClinicalNote) -> Result<String, PromptError> {
    if note.sentences.is_empty() {
        return Err(PromptError::EmptyNote(note.note_id.clone()));
    }
    Ok(format!("{}\n{}", render_note(note), gold_answer(note)?))
}

/// What gets embedded for each training note.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndexedText {
    /// The note followed by its gold answer, as it appears in prompts.
    #[default]
    Exemplar,
    /// The note alone, in the same form as the retrieval query.
    Note,
}

/// Training notes available as exemplars, ordered by note id.
#[derive(Debug, Clone, Default)]
pub struct ExemplarPool<'a> {
    notes: BTreeMap<&'a str, &'a ClinicalNote>,
}

impl<'a> ExemplarPool<'a> {
    /// Collects the training notes of `notes`; other splits are ignored.
    pub fn from_train(notes: impl IntoIterator<Item = &'a ClinicalNote>) -> Self {
        Self {
            notes: notes
                .into_iter()
                .filter(|n| n.split == Split::Train)
                .map(|n| (n.note_id.as_str(), n))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&'a ClinicalNote> {
        self.notes.get(id).copied()
    }

    pub fn notes(&self) -> impl Iterator<Item = &'a ClinicalNote> + '_ {
        self.notes.values().copied()
    }

    /// Documents for the vector store, embedding the rendered exemplars.
    pub fn documents(&self) -> Result<Vec<ExemplarDocument>, PromptError> {
        self.documents_with(IndexedText::Exemplar)
    }

    pub fn documents_with(&self, text: IndexedText) -> Result<Vec<ExemplarDocument>, PromptError> {
        self.notes()
            .map(|n| {
                Ok(ExemplarDocument {
                    note_id: n.note_id.clone(),
                    split: n.split,
                    rendered_text: match text {
                        IndexedText::Exemplar => render_exemplar(n)?,
                        IndexedText::Note => render_note(n),
                    },
                })
            })
            .collect()
    }

    fn sample(&self, n: usize, seed: u64, exclude: &str) -> Vec<&'a ClinicalNote> {
        let ordered: Vec<&ClinicalNote> = self.notes().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // one spare draw so that excluding the target keeps the draw fixed
        let amount = (n + 1).min(ordered.len());
        rand::seq::index::sample(&mut rng, ordered.len(), amount)
            .into_iter()
            .map(|i| ordered[i])
            .filter(|note| note.note_id != exclude)
            .take(n)
            .collect()
    }
}

fn per_note_seed(seed: u64, note_id: &str) -> u64 {
    let digest = sha256_fields([seed.to_string().as_str(), note_id]);
    u64::from_str_radix(&digest[..16], 16).expect("hex digest")
}

pub fn assemble(exemplars: &[String], target: &str) -> String {
    let mut text = String::from(TEMPLATE);
    for e in exemplars {
        text.push_str("\n\n");
        text.push_str(EXEMPLAR_MARKER);
        text.push('\n');
        text.push_str(e);
    }
    text.push_str("\n\n");
    text.push_str(INPUT_MARKER);
    text.push('\n');
    text.push_str(target);
    text
}

/// Builds the prompt for `note`. Exemplars come from `pool` (SPR) or from
/// `index` (RDP); the target's own id is never used as an exemplar.
pub fn build_prompt<T: Scalar>(
    note: &ClinicalNote,
    strategy: &PromptStrategy,
    pool: &ExemplarPool<'_>,
    index: Option<&ExemplarIndex<T>>,
    options: &PromptOptions,
) -> Result<RenderedPrompt, PromptError> {
    strategy.validate()?;
    if note.sentences.is_empty() {
        return Err(PromptError::EmptyNote(note.note_id.clone()));
    }
    let target = render_note(note);
    let requested = strategy.n_exemplars();

    let mut chosen: Vec<&ClinicalNote> = match *strategy {
        PromptStrategy::ZeroShot => Vec::new(),
        PromptStrategy::Spr { n, seed, sampling } => {
            let seed = match sampling {
                SprSampling::PerRun => seed,
                SprSampling::PerNote => per_note_seed(seed, &note.note_id),
            };
            pool.sample(n, seed, &note.note_id)
        }
        PromptStrategy::Rdp { n } => {
            let index = index.ok_or(PromptError::IndexMissing)?;
            let hits = if index.is_empty() {
                Vec::new()
            } else {
                index
                    .retrieve_where(&target, n, options.metric, |id| id != note.note_id)?
                    .hits
            };
            hits.iter()
                .map(|h| {
                    pool.get(&h.note_id)
                        .ok_or_else(|| PromptError::UnknownExemplar(h.note_id.clone()))
                })
                .collect::<Result<_, _>>()?
        }
    };

    if let Some(bad) = chosen.iter().find(|e| e.split != Split::Train) {
        return Err(PromptError::SeparationViolation {
            note_id: note.note_id.clone(),
            exemplar: bad.note_id.clone(),
            split: bad.split,
        });
    }
    let mut clamped = requested - chosen.len();
    if clamped > 0 {
        tracing::warn!(
            note_id = %note.note_id,
            "exemplar pool too small: {} of {requested} exemplars available",
            chosen.len()
        );
    }

    let mut rendered: Vec<String> = chosen
        .iter()
        .map(|e| render_exemplar(e))
        .collect::<Result<_, _>>()?;
    let mut text = assemble(&rendered, &target);
    let before = rendered.len();
    while !rendered.is_empty() && options.estimate_tokens(&text) > options.context_budget_tokens {
        rendered.pop();
        chosen.pop();
        text = assemble(&rendered, &target);
    }
    if rendered.len() < before {
        clamped += before - rendered.len();
        tracing::warn!(
            note_id = %note.note_id,
            "context budget exceeded: kept {} of {before} exemplars",
            rendered.len()
        );
    }

    Ok(RenderedPrompt {
        note_id: note.note_id.clone(),
        strategy: *strategy,
        exemplar_note_ids: chosen.iter().map(|e| e.note_id.clone()).collect(),
        clamped,
        text_hash: sha256_hex(&text),
        text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::segment_text;
    use crate::corpus::test_support::note;
    use crate::retrieval::{build_index, HashingEmbedder, IndexOptions};

    fn train_pool() -> Vec<ClinicalNote> {
        (0..20)
            .map(|i| {
                let err = (i % 2 == 0).then_some(("1", "Aspirin was given."));
                note(
                    &format!("ms-train-{i:02}"),
                    Split::Train,
                    &[
                        &format!("Case {i} presents with fever."),
                        "Ibuprofen was given.",
                    ],
                    err,
                )
            })
            .collect()
    }

    #[test]
    fn template_is_two_lines() {
        assert_eq!(TEMPLATE.lines().count(), 2);
        assert!(!TEMPLATE.ends_with('\n'));
    }

    #[test]
    fn render_note_format_and_round_trip() {
        let n = note(
            "ms-test-1",
            Split::Test,
            &["A 23-year-old man presents.", "No injury."],
            None,
        );
        assert_eq!(
            render_note(&n),
            "0|A 23-year-old man presents.\n1|No injury."
        );
        let back = segment_text(&render_note(&n)).unwrap();
        assert_eq!(back, n.sentences);
        let one = note("ms-test-2", Split::Test, &["Only."], None);
        assert_eq!(render_note(&one), "0|Only.");
    }

    #[test]
    fn render_exemplar_appends_answer() {
        let ok = note("ms-train-1", Split::Train, &["Fine."], None);
        assert_eq!(render_exemplar(&ok).unwrap(), "0|Fine.\nCORRECT");
        let bad = note(
            "ms-train-2",
            Split::Train,
            &["a", "b", "c", "d"],
            Some(("3", "Fixed d.")),
        );
        assert_eq!(
            render_exemplar(&bad).unwrap(),
            "0|a\n1|b\n2|c\n3|d\n3 Fixed d."
        );
        let mut missing = bad.clone();
        missing.gold_correction = None;
        assert!(matches!(
            render_exemplar(&missing),
            Err(PromptError::MissingGoldCorrection(_))
        ));
    }

    #[test]
    fn spr_zero_equals_zero_shot() {
        let pool_notes = train_pool();
        let pool = ExemplarPool::from_train(&pool_notes);
        let target = note("ms-test-1", Split::Test, &["x"], None);
        let opts = PromptOptions::default();
        let z =
            build_prompt::<f64>(&target, &PromptStrategy::ZeroShot, &pool, None, &opts).unwrap();
        let s = build_prompt::<f64>(
            &target,
            &PromptStrategy::Spr {
                n: 0,
                seed: 3,
                sampling: SprSampling::PerRun,
            },
            &pool,
            None,
            &opts,
        )
        .unwrap();
        assert_eq!(z.text, s.text);
        assert_eq!(z.text.matches(TEMPLATE).count(), 1);
        assert!(z.text.ends_with("=== INPUT ===\n0|x"));
    }

    #[test]
    fn spr_is_deterministic_and_per_run_fixed() {
        let pool_notes = train_pool();
        let pool = ExemplarPool::from_train(&pool_notes);
        let opts = PromptOptions::default();
        let a = note("ms-test-1", Split::Test, &["x"], None);
        let b = note("ms-test-2", Split::Test, &["y"], None);
        let spr = PromptStrategy::Spr {
            n: 10,
            seed: 7,
            sampling: SprSampling::PerRun,
        };
        let p1 = build_prompt::<f64>(&a, &spr, &pool, None, &opts).unwrap();
        let p2 = build_prompt::<f64>(&a, &spr, &pool, None, &opts).unwrap();
        assert_eq!(p1.text_hash, p2.text_hash);
        assert_eq!(p1.exemplar_note_ids.len(), 10);
        let pb = build_prompt::<f64>(&b, &spr, &pool, None, &opts).unwrap();
        assert_eq!(p1.exemplar_note_ids, pb.exemplar_note_ids);

        let per_note = PromptStrategy::Spr {
            n: 10,
            seed: 7,
            sampling: SprSampling::PerNote,
        };
        let qa = build_prompt::<f64>(&a, &per_note, &pool, None, &opts).unwrap();
        let qb = build_prompt::<f64>(&b, &per_note, &pool, None, &opts).unwrap();
        assert_ne!(qa.exemplar_note_ids, qb.exemplar_note_ids);
    }

    #[test]
    fn spr_clamps_to_pool_and_excludes_target() {
        let pool_notes = train_pool();
        let pool = ExemplarPool::from_train(&pool_notes);
        let spr = PromptStrategy::Spr {
            n: 50,
            seed: 1,
            sampling: SprSampling::PerRun,
        };
        let target = &pool_notes[3];
        let p = build_prompt::<f64>(target, &spr, &pool, None, &PromptOptions::default()).unwrap();
        assert_eq!(p.exemplar_note_ids.len(), 19);
        assert_eq!(p.clamped, 31);
        assert!(!p.exemplar_note_ids.contains(&target.note_id));
    }

    #[test]
    fn rdp_follows_rank_order_and_needs_index() {
        let pool_notes = train_pool();
        let pool = ExemplarPool::from_train(&pool_notes);
        let opts = PromptOptions::default();
        let target = note(
            "ms-test-1",
            Split::Test,
            &pool_notes[4]
                .sentences
                .iter()
                .map(|s| s.text.as_str())
                .collect::<Vec<_>>(),
            None,
        );
        assert!(matches!(
            build_prompt::<f64>(&target, &PromptStrategy::Rdp { n: 3 }, &pool, None, &opts),
            Err(PromptError::IndexMissing)
        ));
        let index = build_index::<f64>(
            &pool.documents().unwrap(),
            &IndexOptions::default(),
            Box::new(HashingEmbedder::default()),
        )
        .unwrap();
        let p = build_prompt(
            &target,
            &PromptStrategy::Rdp { n: 3 },
            &pool,
            Some(&index),
            &opts,
        )
        .unwrap();
        let expected: Vec<String> = index
            .retrieve(&render_note(&target), 3, Metric::Cosine)
            .unwrap()
            .note_ids()
            .map(String::from)
            .collect();
        assert_eq!(p.exemplar_note_ids, expected);
        assert_eq!(p.exemplar_note_ids[0], "ms-train-04");
        let positions: Vec<usize> = p
            .exemplar_note_ids
            .iter()
            .map(|id| {
                p.text
                    .find(&render_exemplar(pool.get(id).unwrap()).unwrap())
                    .unwrap()
            })
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert!(PromptStrategy::Rdp { n: 0 }.validate().is_err());
    }

    #[test]
    fn context_budget_drops_last_exemplars() {
        let pool_notes = train_pool();
        let pool = ExemplarPool::from_train(&pool_notes);
        let target = note("ms-test-1", Split::Test, &["x"], None);
        let zero = build_prompt::<f64>(
            &target,
            &PromptStrategy::ZeroShot,
            &pool,
            None,
            &PromptOptions::default(),
        )
        .unwrap();
        let opts = PromptOptions {
            context_budget_tokens: zero.text.len() / 4 + 30,
            ..PromptOptions::default()
        };
        let spr = PromptStrategy::Spr {
            n: 10,
            seed: 7,
            sampling: SprSampling::PerRun,
        };
        let full =
            build_prompt::<f64>(&target, &spr, &pool, None, &PromptOptions::default()).unwrap();
        let cut = build_prompt::<f64>(&target, &spr, &pool, None, &opts).unwrap();
        assert!(cut.exemplar_note_ids.len() < 10);
        assert_eq!(cut.clamped, 10 - cut.exemplar_note_ids.len());
        assert_eq!(
            full.exemplar_note_ids[..cut.exemplar_note_ids.len()],
            cut.exemplar_note_ids[..]
        );
    }
}
