use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    chunk_document, cosine_from_parts, dot, embed, norm, ChunkConfig, Embedder, EmbeddingVector,
    ExemplarDocument, Metric, RetrievalError, RetrievalHit, RetrievalResult, TextChunk,
};
use crate::corpus::Split;
use crate::scalar::Scalar;
use crate::util::{bounded_map, sha256_fields};

pub const INDEX_VERSION: u32 = 1;
const INDEX_FORMAT: &str = "medcorr-index";

#[derive(Debug, Clone, PartialEq)]
pub struct Chunk<T> {
    pub chunk_id: String,
    pub source_note_id: String,
    pub char_range: (usize, usize),
    pub text: String,
    pub embedding: EmbeddingVector<T>,
}

/// What a persisted index was built from. A loaded index is only reused
/// when every field matches the current configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexHeader {
    pub format: String,
    pub version: u32,
    pub backend_id: String,
    pub dim: usize,
    pub chunk: ChunkConfig,
    pub corpus_fingerprint: String,
    pub n_documents: usize,
    pub n_chunks: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexOptions {
    pub chunk: ChunkConfig,
    pub batch_size: usize,
    pub max_in_flight: usize,
}

impl Default for IndexOptions {
    fn default() -> Self {
        Self {
            chunk: ChunkConfig::default(),
            batch_size: 64,
            max_in_flight: 4,
        }
    }
}

/// Immutable exact-scan index over embedded exemplar chunks.
pub struct ExemplarIndex<T: Scalar> {
    header: IndexHeader,
    chunks: Vec<Chunk<T>>,
    norms: Vec<T>,
    documents: BTreeSet<String>,
    embedder: Option<Box<dyn Embedder<T>>>,
}

impl<T: Scalar> std::fmt::Debug for ExemplarIndex<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExemplarIndex")
            .field("header", &self.header)
            .field("chunks", &self.chunks.len())
            .finish()
    }
}

/// Fingerprint of the documents an index is built from.
pub fn documents_fingerprint(docs: &[ExemplarDocument]) -> String {
    sha256_fields(
        docs.iter()
            .flat_map(|d| [d.note_id.as_str(), d.rendered_text.as_str()]),
    )
}

/// Chunks and embeds training documents into an index.
pub fn build_index<T: Scalar>(
    docs: &[ExemplarDocument],
    options: &IndexOptions,
    embedder: Box<dyn Embedder<T>>,
) -> Result<ExemplarIndex<T>, RetrievalError> {
    options.chunk.validate()?;
    if let Some(bad) = docs.iter().find(|d| d.split != Split::Train) {
        return Err(RetrievalError::NonTrainDocument(bad.note_id.clone()));
    }

    let mut text_chunks: Vec<TextChunk> = Vec::new();
    for doc in docs {
        text_chunks.extend(chunk_document(doc, &options.chunk)?);
    }

    let texts: Vec<String> = text_chunks.iter().map(|c| c.text.clone()).collect();
    let batches: Vec<&[String]> = texts.chunks(options.batch_size.max(1)).collect();
    let embedded = bounded_map(&batches, options.max_in_flight, |_, batch| {
        embed(batch, embedder.as_ref())
    });
    let mut vectors = Vec::with_capacity(texts.len());
    for batch in embedded {
        vectors.extend(batch?);
    }
    let dim = vectors.first().map(|v| v.dim()).unwrap_or(0);
    if let Some(bad) = vectors.iter().find(|v| v.dim() != dim) {
        return Err(RetrievalError::DimensionMismatch {
            expected: dim,
            got: bad.dim(),
        });
    }

    let chunks: Vec<Chunk<T>> = text_chunks
        .into_iter()
        .zip(vectors)
        .map(|(c, embedding)| Chunk {
            chunk_id: c.chunk_id,
            source_note_id: c.source_note_id,
            char_range: c.char_range,
            text: c.text,
            embedding,
        })
        .collect();
    let header = IndexHeader {
        format: INDEX_FORMAT.into(),
        version: INDEX_VERSION,
        backend_id: embedder.backend_id(),
        dim,
        chunk: options.chunk.clone(),
        corpus_fingerprint: documents_fingerprint(docs),
        n_documents: docs.len(),
        n_chunks: chunks.len(),
    };
    let documents = docs.iter().map(|d| d.note_id.clone()).collect();
    Ok(ExemplarIndex::assemble(
        header,
        chunks,
        documents,
        Some(embedder),
    ))
}

#[derive(Serialize, Deserialize)]
struct ChunkRecord {
    chunk_id: String,
    source_note_id: String,
    char_range: (usize, usize),
    text: String,
    embedding: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DocumentsRecord {
    documents: Vec<String>,
}

impl<T: Scalar> ExemplarIndex<T> {
    fn assemble(
        header: IndexHeader,
        chunks: Vec<Chunk<T>>,
        documents: BTreeSet<String>,
        embedder: Option<Box<dyn Embedder<T>>>,
    ) -> Self {
        let norms = chunks.iter().map(|c| norm(c.embedding.values())).collect();
        Self {
            header,
            chunks,
            norms,
            documents,
            embedder,
        }
    }

    /// Builds an index from chunks that already carry embeddings.
    pub fn from_chunks(
        chunks: Vec<Chunk<T>>,
        backend_id: impl Into<String>,
    ) -> Result<Self, RetrievalError> {
        let dim = chunks.first().map(|c| c.embedding.dim()).unwrap_or(0);
        if let Some(bad) = chunks.iter().find(|c| c.embedding.dim() != dim) {
            return Err(RetrievalError::DimensionMismatch {
                expected: dim,
                got: bad.embedding.dim(),
            });
        }
        let documents: BTreeSet<String> = chunks.iter().map(|c| c.source_note_id.clone()).collect();
        let header = IndexHeader {
            format: INDEX_FORMAT.into(),
            version: INDEX_VERSION,
            backend_id: backend_id.into(),
            dim,
            chunk: ChunkConfig::default(),
            corpus_fingerprint: String::new(),
            n_documents: documents.len(),
            n_chunks: chunks.len(),
        };
        Ok(Self::assemble(header, chunks, documents, None))
    }

    pub fn header(&self) -> &IndexHeader {
        &self.header
    }

    pub fn chunks(&self) -> &[Chunk<T>] {
        &self.chunks
    }

    pub fn document_ids(&self) -> &BTreeSet<String> {
        &self.documents
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// Attaches the embedder used for query text. It must match the one the
    /// index was built with.
    pub fn with_embedder(mut self, embedder: Box<dyn Embedder<T>>) -> Result<Self, RetrievalError> {
        if !self.chunks.is_empty() && embedder.backend_id() != self.header.backend_id {
            return Err(RetrievalError::StaleIndex(format!(
                "index built with `{}`, query embedder is `{}`",
                self.header.backend_id,
                embedder.backend_id()
            )));
        }
        self.embedder = Some(embedder);
        Ok(self)
    }

    /// Embeds `query_text` with the index's backend and returns the top `k`
    /// documents.
    pub fn retrieve(
        &self,
        query_text: &str,
        k: usize,
        metric: Metric,
    ) -> Result<RetrievalResult<T>, RetrievalError> {
        self.retrieve_where(query_text, k, metric, |_| true)
    }

    /// Like [`retrieve`](Self::retrieve) but skips documents rejected by
    /// `keep`.
    pub fn retrieve_where(
        &self,
        query_text: &str,
        k: usize,
        metric: Metric,
        keep: impl Fn(&str) -> bool,
    ) -> Result<RetrievalResult<T>, RetrievalError> {
        if self.chunks.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        let embedder = self.embedder.as_ref().ok_or_else(|| {
            RetrievalError::BackendUnavailable("index has no query embedder attached".into())
        })?;
        let query = embed(&[query_text.to_string()], embedder.as_ref())?
            .pop()
            .expect("one vector per input");
        self.search(&query, k, metric, keep)
    }

    /// Exact top-`k` search by document. Each document scores as its best
    /// chunk; ties are broken by ascending note id. Chunks with a zero
    /// embedding are skipped under cosine. Documents rejected by `keep` are
    /// never returned.
    pub fn search(
        &self,
        query: &EmbeddingVector<T>,
        k: usize,
        metric: Metric,
        keep: impl Fn(&str) -> bool,
    ) -> Result<RetrievalResult<T>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        if self.chunks.is_empty() {
            return Ok(RetrievalResult { hits: Vec::new() });
        }
        if query.dim() != self.header.dim {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.header.dim,
                got: query.dim(),
            });
        }
        let q_norm = query.norm();
        if metric == Metric::Cosine && q_norm == T::zero() {
            return Err(RetrievalError::ZeroVector);
        }

        let mut best: HashMap<&str, T> = HashMap::new();
        for (chunk, c_norm) in self.chunks.iter().zip(&self.norms) {
            if !keep(&chunk.source_note_id) {
                continue;
            }
            let d = dot(query.values(), chunk.embedding.values());
            let score = match metric {
                Metric::DotProduct => d,
                Metric::Cosine => {
                    if *c_norm == T::zero() {
                        continue;
                    }
                    cosine_from_parts(d, q_norm, *c_norm)
                }
            };
            best.entry(chunk.source_note_id.as_str())
                .and_modify(|s| {
                    if score > *s {
                        *s = score;
                    }
                })
                .or_insert(score);
        }

        let mut candidates: Vec<(&str, T)> = best.into_iter().collect();
        let order = |a: &(&str, T), b: &(&str, T)| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.0.cmp(b.0))
        };
        let k = k.min(candidates.len());
        if k < candidates.len() {
            candidates.select_nth_unstable_by(k, order);
            candidates.truncate(k);
        }
        candidates.sort_by(order);
        Ok(RetrievalResult {
            hits: candidates
                .into_iter()
                .enumerate()
                .map(|(i, (id, score))| RetrievalHit {
                    note_id: id.to_string(),
                    score,
                    rank: i + 1,
                })
                .collect(),
        })
    }

    /// Writes a header line, a document-list line, then one line per chunk.
    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let fail = |e: std::io::Error| RetrievalError::IndexFile {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let mut out = BufWriter::new(File::create(path).map_err(fail)?);
        let mut line = |v: &dyn erased::Json| -> Result<(), RetrievalError> {
            v.write_to(&mut out).map_err(fail)?;
            out.write_all(b"\n").map_err(fail)
        };
        line(&self.header)?;
        line(&DocumentsRecord {
            documents: self.documents.iter().cloned().collect(),
        })?;
        for c in &self.chunks {
            line(&ChunkRecord {
                chunk_id: c.chunk_id.clone(),
                source_note_id: c.source_note_id.clone(),
                char_range: c.char_range,
                text: c.text.clone(),
                embedding: c
                    .embedding
                    .values()
                    .iter()
                    .map(|v| v.to_f64_lossy())
                    .collect(),
            })?;
        }
        out.flush().map_err(fail)
    }

    /// Loads a persisted index and rejects it unless it was built by
    /// `embedder` with `chunk` over documents with `corpus_fingerprint`.
    pub fn load(
        path: &Path,
        embedder: Box<dyn Embedder<T>>,
        chunk: &ChunkConfig,
        corpus_fingerprint: &str,
    ) -> Result<Self, RetrievalError> {
        let fail = |line: usize, message: String| RetrievalError::IndexFile {
            path: path.display().to_string(),
            message: format!("line {line}: {message}"),
        };
        let file = File::open(path).map_err(|e| fail(0, e.to_string()))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let mut next_line = || -> Result<Option<(usize, String)>, RetrievalError> {
            match lines.next() {
                None => Ok(None),
                Some((i, l)) => l
                    .map(|l| Some((i + 1, l)))
                    .map_err(|e| fail(i + 1, e.to_string())),
            }
        };
        let (_, head) = next_line()?.ok_or_else(|| fail(1, "missing header".into()))?;
        let header: IndexHeader =
            serde_json::from_str(&head).map_err(|e| fail(1, e.to_string()))?;
        if header.format != INDEX_FORMAT || header.version != INDEX_VERSION {
            return Err(RetrievalError::StaleIndex(format!(
                "unsupported index {} v{}",
                header.format, header.version
            )));
        }
        let expected_backend = embedder.backend_id();
        if header.backend_id != expected_backend {
            return Err(RetrievalError::StaleIndex(format!(
                "built with backend `{}`, configured `{expected_backend}`",
                header.backend_id
            )));
        }
        if &header.chunk != chunk {
            return Err(RetrievalError::StaleIndex(
                "chunk configuration changed".into(),
            ));
        }
        if header.corpus_fingerprint != corpus_fingerprint {
            return Err(RetrievalError::StaleIndex(
                "training documents changed".into(),
            ));
        }
        let (_, docs_line) = next_line()?.ok_or_else(|| fail(2, "missing document list".into()))?;
        let docs: DocumentsRecord =
            serde_json::from_str(&docs_line).map_err(|e| fail(2, e.to_string()))?;

        let mut chunks = Vec::with_capacity(header.n_chunks);
        while let Some((lineno, l)) = next_line()? {
            if l.trim().is_empty() {
                continue;
            }
            let r: ChunkRecord =
                serde_json::from_str(&l).map_err(|e| fail(lineno, e.to_string()))?;
            let values = r.embedding.into_iter().map(T::from_f64_lossy).collect();
            let embedding =
                EmbeddingVector::new(values).map_err(|e| fail(lineno, e.to_string()))?;
            if embedding.dim() != header.dim {
                return Err(RetrievalError::DimensionMismatch {
                    expected: header.dim,
                    got: embedding.dim(),
                });
            }
            chunks.push(Chunk {
                chunk_id: r.chunk_id,
                source_note_id: r.source_note_id,
                char_range: r.char_range,
                text: r.text,
                embedding,
            });
        }
        if chunks.len() != header.n_chunks || docs.documents.len() != header.n_documents {
            return Err(fail(
                0,
                "chunk or document count disagrees with header".into(),
            ));
        }
        let documents = docs.documents.into_iter().collect();
        Ok(Self::assemble(header, chunks, documents, Some(embedder)))
    }
}

mod erased {
    pub trait Json {
        fn write_to(&self, out: &mut dyn std::io::Write) -> std::io::Result<()>;
    }

    impl<S: serde::Serialize> Json for S {
        fn write_to(&self, out: &mut dyn std::io::Write) -> std::io::Result<()> {
            serde_json::to_writer(out, self).map_err(std::io::Error::other)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::HashingEmbedder;

    fn doc(id: &str, split: Split, text: &str) -> ExemplarDocument {
        ExemplarDocument {
            note_id: id.into(),
            split,
            rendered_text: text.into(),
        }
    }

    fn hashing() -> Box<dyn Embedder<f64>> {
        Box::new(HashingEmbedder::default())
    }

    fn docs() -> Vec<ExemplarDocument> {
        vec![
            doc(
                "ms-train-1",
                Split::Train,
                "0|Patient has chest pain.\nCORRECT",
            ),
            doc(
                "ms-train-2",
                Split::Train,
                "0|Aspirin 81 mg daily was started.\n0 Aspirin 325 mg",
            ),
            doc(
                "ms-train-3",
                Split::Train,
                "0|Chest radiograph shows consolidation.\nCORRECT",
            ),
        ]
    }

    #[test]
    fn self_retrieval_ranks_first_with_unit_cosine() {
        let index = build_index(&docs(), &IndexOptions::default(), hashing()).unwrap();
        let text = &docs()[1].rendered_text;
        let r = index.retrieve(text, 1, Metric::Cosine).unwrap();
        assert_eq!(r.hits[0].note_id, "ms-train-2");
        assert!((r.hits[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn k_is_clamped_and_results_sorted() {
        let index = build_index(&docs(), &IndexOptions::default(), hashing()).unwrap();
        let r = index.retrieve("chest pain", 25, Metric::Cosine).unwrap();
        assert_eq!(r.hits.len(), 3);
        assert!(r.hits.windows(2).all(|w| w[0].score >= w[1].score));
        assert_eq!(
            r.hits.iter().map(|h| h.rank).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
        assert!(matches!(
            index.retrieve("x", 0, Metric::Cosine),
            Err(RetrievalError::InvalidK)
        ));
    }

    #[test]
    fn rejects_non_train_documents() {
        let mut d = docs();
        d.push(doc("ms-test-9", Split::Test, "0|x"));
        assert!(matches!(
            build_index(&d, &IndexOptions::default(), hashing()),
            Err(RetrievalError::NonTrainDocument(id)) if id == "ms-test-9"
        ));
    }

    #[test]
    fn empty_index() {
        let index = build_index(&[], &IndexOptions::default(), hashing()).unwrap();
        assert!(index.is_empty());
        assert!(matches!(
            index.retrieve("q", 3, Metric::Cosine),
            Err(RetrievalError::EmptyIndex)
        ));
        let q = HashingEmbedder::default().vector::<f64>("q");
        assert!(index
            .search(&q, 3, Metric::Cosine, |_| true)
            .unwrap()
            .hits
            .is_empty());
    }

    #[test]
    fn ties_break_by_note_id() {
        let e = |v: Vec<f64>| EmbeddingVector::new(v).unwrap();
        let chunk = |id: &str, v: Vec<f64>| Chunk {
            chunk_id: format!("{id}#0"),
            source_note_id: id.into(),
            char_range: (0, 1),
            text: "x".into(),
            embedding: e(v),
        };
        let index = ExemplarIndex::from_chunks(
            vec![
                chunk("c", vec![1.0, 0.0]),
                chunk("a", vec![2.0, 0.0]),
                chunk("b", vec![1.0, 0.0]),
                chunk("b", vec![0.0, 1.0]),
            ],
            "test",
        )
        .unwrap();
        let r = index
            .search(&e(vec![1.0, 0.0]), 2, Metric::Cosine, |_| true)
            .unwrap();
        assert_eq!(r.note_ids().collect::<Vec<_>>(), vec!["a", "b"]);
        let r = index
            .search(&e(vec![1.0, 0.0]), 3, Metric::DotProduct, |_| true)
            .unwrap();
        assert_eq!(r.note_ids().collect::<Vec<_>>(), vec!["a", "b", "c"]);
        let r = index
            .search(&e(vec![1.0, 0.0]), 3, Metric::Cosine, |id| id != "a")
            .unwrap();
        assert_eq!(r.note_ids().collect::<Vec<_>>(), vec!["b", "c"]);
    }

    #[test]
    fn persistence_round_trip_and_staleness() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.jsonl");
        let d = docs();
        let options = IndexOptions::default();
        let index = build_index(&d, &options, hashing()).unwrap();
        index.save(&path).unwrap();
        let fp = documents_fingerprint(&d);

        let loaded = ExemplarIndex::load(&path, hashing(), &options.chunk, &fp).unwrap();
        assert_eq!(loaded.chunks(), index.chunks());
        assert_eq!(loaded.header(), index.header());

        let other_backend: Box<dyn Embedder<f64>> = Box::new(HashingEmbedder::with_dim(64));
        assert!(matches!(
            ExemplarIndex::load(&path, other_backend, &options.chunk, &fp),
            Err(RetrievalError::StaleIndex(_))
        ));
        assert!(matches!(
            ExemplarIndex::load(&path, hashing(), &options.chunk, "different"),
            Err(RetrievalError::StaleIndex(_))
        ));
        let chunk = ChunkConfig {
            max_len: 500,
            ..options.chunk.clone()
        };
        assert!(matches!(
            ExemplarIndex::load(&path, hashing(), &chunk, &fp),
            Err(RetrievalError::StaleIndex(_))
        ));
    }

    #[test]
    fn cosine_ranking_is_scale_invariant() {
        let index = build_index(&docs(), &IndexOptions::default(), hashing()).unwrap();
        let q = HashingEmbedder::default().vector::<f64>("aspirin chest pain");
        let before: Vec<String> = index
            .search(&q, 3, Metric::Cosine, |_| true)
            .unwrap()
            .note_ids()
            .map(String::from)
            .collect();
        let scaled: Vec<Chunk<f64>> = index
            .chunks()
            .iter()
            .enumerate()
            .map(|(i, c)| Chunk {
                embedding: c.embedding.scaled(1.0 + 3.0 * i as f64).unwrap(),
                ..c.clone()
            })
            .collect();
        let scaled = ExemplarIndex::from_chunks(scaled, "scaled").unwrap();
        let after: Vec<String> = scaled
            .search(&q, 3, Metric::Cosine, |_| true)
            .unwrap()
            .note_ids()
            .map(String::from)
            .collect();
        assert_eq!(before, after);
    }
}
