use serde::{Deserialize, Serialize};

use super::{ExemplarDocument, RetrievalError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkConfig {
    /// Upper bound on chunk length, in characters.
    pub max_len: usize,
    /// Characters shared by consecutive chunks.
    pub overlap: usize,
    /// Tried in order; the last one must be `""` (character-level cut).
    pub separators: Vec<String>,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self {
            max_len: 2_000,
            overlap: 200,
            separators: ["\n\n", "\n", " ", ""]
                .into_iter()
                .map(String::from)
                .collect(),
        }
    }
}

impl ChunkConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.max_len == 0 || self.overlap >= self.max_len {
            return Err(RetrievalError::InvalidConfig(format!(
                "overlap {} must be smaller than max_len {}",
                self.overlap, self.max_len
            )));
        }
        match self.separators.last() {
            Some(last) if last.is_empty() => Ok(()),
            _ => Err(RetrievalError::InvalidConfig(
                "separator list must end with the empty separator".into(),
            )),
        }
    }
}

/// A chunk before embedding. `char_range` is a half-open range of character
/// (not byte) offsets into the rendered document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextChunk {
    pub chunk_id: String,
    pub source_note_id: String,
    pub char_range: (usize, usize),
    pub text: String,
}

/// Splits a document into overlapping chunks of at most `max_len` characters.
///
/// The text is first cut recursively into pieces no longer than `max_len`,
/// trying each separator in order and keeping separators attached to the
/// preceding piece, so no character is ever dropped. Pieces are then packed
/// greedily. Every chunk after the first starts `overlap` characters before
/// the end of its predecessor. A chunk that would otherwise hold no more than
/// `overlap` characters is filled up to `max_len` by cutting the next piece,
/// so consecutive chunks always share exactly `overlap` characters.
pub fn chunk_document(
    doc: &ExemplarDocument,
    cfg: &ChunkConfig,
) -> Result<Vec<TextChunk>, RetrievalError> {
    cfg.validate()?;
    let text = doc.rendered_text.as_str();
    let mut bounds: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
    bounds.push(text.len());
    let n_chars = bounds.len() - 1;
    if n_chars == 0 {
        return Ok(Vec::new());
    }

    let mut pieces = Vec::new();
    split_recursive(text, &bounds, 0, n_chars, 0, cfg, &mut pieces);

    let spans = pack(&pieces, n_chars, cfg);
    Ok(spans
        .into_iter()
        .enumerate()
        .map(|(i, (start, end))| TextChunk {
            chunk_id: format!("{}#{}", doc.note_id, i),
            source_note_id: doc.note_id.clone(),
            char_range: (start, end),
            text: text[bounds[start]..bounds[end]].to_string(),
        })
        .collect())
}

fn split_recursive(
    text: &str,
    bounds: &[usize],
    start: usize,
    end: usize,
    level: usize,
    cfg: &ChunkConfig,
    out: &mut Vec<(usize, usize)>,
) {
    if end - start <= cfg.max_len {
        out.push((start, end));
        return;
    }
    let Some(sep) = cfg.separators.get(level) else {
        hard_cut(start, end, cfg.max_len, out);
        return;
    };
    if sep.is_empty() {
        hard_cut(start, end, cfg.max_len, out);
        return;
    }
    let slice = &text[bounds[start]..bounds[end]];
    if !slice.contains(sep.as_str()) {
        split_recursive(text, bounds, start, end, level + 1, cfg, out);
        return;
    }

    let sep_chars = sep.chars().count();
    let mut piece_start = start;
    let mut cursor = 0;
    while let Some(found) = slice[cursor..].find(sep.as_str()) {
        let byte_end = bounds[start] + cursor + found + sep.len();
        let piece_end = char_index(bounds, byte_end);
        debug_assert!(piece_end >= piece_start + sep_chars);
        if piece_end - piece_start > cfg.max_len {
            split_recursive(text, bounds, piece_start, piece_end, level + 1, cfg, out);
        } else {
            out.push((piece_start, piece_end));
        }
        piece_start = piece_end;
        cursor = cursor + found + sep.len();
    }
    if piece_start < end {
        if end - piece_start > cfg.max_len {
            split_recursive(text, bounds, piece_start, end, level + 1, cfg, out);
        } else {
            out.push((piece_start, end));
        }
    }
}

fn hard_cut(start: usize, end: usize, max_len: usize, out: &mut Vec<(usize, usize)>) {
    let mut s = start;
    while s < end {
        let e = (s + max_len).min(end);
        out.push((s, e));
        s = e;
    }
}

fn char_index(bounds: &[usize], byte: usize) -> usize {
    bounds
        .binary_search(&byte)
        .expect("separator matches end on a char boundary")
}

fn pack(pieces: &[(usize, usize)], n_chars: usize, cfg: &ChunkConfig) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    // `covered` is the end of the text already emitted; pieces past it are pending.
    let mut covered = 0;
    let mut piece_idx = 0;
    while covered < n_chars {
        let start = if spans.is_empty() {
            0
        } else {
            covered - cfg.overlap
        };
        let limit = start + cfg.max_len;
        let mut end = covered;
        while piece_idx < pieces.len() {
            let (p_start, p_end) = pieces[piece_idx];
            let p_start = p_start.max(end);
            debug_assert_eq!(p_start, end);
            if p_end <= limit {
                end = p_end;
                piece_idx += 1;
            } else {
                break;
            }
        }
        if end - start <= cfg.overlap {
            // too little new text behind the overlap: cut the next piece at the bound
            end = limit.min(n_chars);
            while piece_idx < pieces.len() && pieces[piece_idx].1 <= end {
                piece_idx += 1;
            }
        }
        spans.push((start, end));
        covered = end;
    }
    spans
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;

    fn doc(text: &str) -> ExemplarDocument {
        ExemplarDocument {
            note_id: "ms-train-1".into(),
            split: Split::Train,
            rendered_text: text.into(),
        }
    }

    fn cfg(max_len: usize, overlap: usize) -> ChunkConfig {
        ChunkConfig {
            max_len,
            overlap,
            ..ChunkConfig::default()
        }
    }

    /// Reassembles chunks by dropping the first `overlap` characters of each
    /// chunk after the first, checking that the dropped prefix really repeats
    /// the tail of the previous chunk.
    fn reassemble(chunks: &[TextChunk], overlap: usize) -> String {
        let mut out: Vec<char> = Vec::new();
        for (i, c) in chunks.iter().enumerate() {
            let chars: Vec<char> = c.text.chars().collect();
            if i == 0 {
                out.extend(&chars);
            } else {
                let shared: Vec<char> = out[out.len() - overlap..].to_vec();
                assert_eq!(&chars[..overlap], &shared[..], "chunk {i} overlap mismatch");
                out.extend(&chars[overlap..]);
            }
        }
        out.into_iter().collect()
    }

    #[test]
    fn short_document_is_one_chunk() {
        let chunks =
            chunk_document(&doc("0|Short note.\nCORRECT"), &ChunkConfig::default()).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].text, "0|Short note.\nCORRECT");
        assert_eq!(chunks[0].char_range, (0, 21));
    }

    #[test]
    fn five_thousand_chars_cover_with_overlap() {
        let mut text = String::new();
        let mut i = 0;
        while text.chars().count() < 5_000 {
            text.push_str(&format!(
                "{i}|Patient sentence number {i} with some clinical words.\n"
            ));
            if i % 7 == 6 {
                text.push('\n');
            }
            i += 1;
        }
        let text: String = text.chars().take(5_000).collect();
        let chunks = chunk_document(&doc(&text), &cfg(2_000, 200)).unwrap();
        assert!(chunks.len() >= 3);
        for c in &chunks {
            let len = c.text.chars().count();
            assert!(len <= 2_000);
            assert_eq!(c.char_range.1 - c.char_range.0, len);
        }
        assert_eq!(reassemble(&chunks, 200), text);
    }

    #[test]
    fn overlap_must_be_smaller_than_max_len() {
        assert!(matches!(
            chunk_document(&doc("abc"), &cfg(100, 100)),
            Err(RetrievalError::InvalidConfig(_))
        ));
        let bad = ChunkConfig {
            separators: vec!["\n".into()],
            ..ChunkConfig::default()
        };
        assert!(matches!(
            bad.validate(),
            Err(RetrievalError::InvalidConfig(_))
        ));
    }

    #[test]
    fn multibyte_text_is_split_on_char_boundaries() {
        let text = "é".repeat(250) + " " + &"ü".repeat(250);
        let chunks = chunk_document(&doc(&text), &cfg(100, 10)).unwrap();
        assert_eq!(reassemble(&chunks, 10), text);
        assert!(chunks.iter().all(|c| c.text.chars().count() <= 100));
    }

    #[test]
    fn prefers_paragraph_breaks() {
        let para = "word ".repeat(10); // 50 chars
        let text = format!("{para}\n\n{para}\n\n{para}");
        let chunks = chunk_document(&doc(&text), &cfg(60, 0)).unwrap();
        assert_eq!(chunks.len(), 3);
        assert!(chunks[0].text.ends_with("\n\n"));
    }

    proptest::proptest! {
        #[test]
        fn coverage_holds(
            text in "[a-c \n]{1,400}",
            max_len in 2usize..80,
            overlap_frac in 0.0f64..1.0,
        ) {
            let overlap = ((max_len as f64) * overlap_frac) as usize;
            let overlap = overlap.min(max_len - 1);
            let chunks = chunk_document(&doc(&text), &cfg(max_len, overlap)).unwrap();
            proptest::prop_assert_eq!(reassemble(&chunks, overlap), text.clone());
            for c in &chunks {
                proptest::prop_assert!(c.text.chars().count() <= max_len);
                proptest::prop_assert!(!c.text.is_empty());
            }
            for w in chunks.windows(2) {
                proptest::prop_assert!(w[1].char_range.1 > w[0].char_range.1);
            }
        }
    }
}
