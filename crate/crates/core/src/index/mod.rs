//! Top-down hierarchical indexing: document → overlapping chunks →
//! per-chunk summaries → overlapping summary slices → slice embeddings.

mod persist;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{tokenize, CharIndexed, Corpus, Document, TokenMode, TokenSpan};
use crate::services::{Embedder, ServiceError, Summarizer};
use crate::store::{StoreError, Vector, VectorStore};

pub use persist::{load_index, read_manifest, save_index, Manifest, FORMAT_VERSION};

/// Summaries longer than this multiple of their chunk are rejected.
pub const SUMMARY_MAX_RATIO: (usize, usize) = (6, 5);
/// Length of the raw-truncation fallback summary, in characters.
pub const FALLBACK_SUMMARY_CHARS: usize = 1000;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("invalid index config: {0}")]
    Config(String),
    #[error("summarizing {doc_id}/{chunk_id} failed: {source}")]
    Summarize {
        doc_id: String,
        chunk_id: usize,
        #[source]
        source: ServiceError,
    },
    #[error("embedding slices of {doc_id} failed: {source}")]
    Embed {
        doc_id: String,
        #[source]
        source: ServiceError,
    },
    #[error("embedder returned {got} vectors for {expected} texts in {doc_id}")]
    EmbedCount {
        doc_id: String,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{} document(s) failed to index; first: {}", .0.len(), .0.first().map(|f| f.to_string()).unwrap_or_default())]
    DocumentsFailed(Vec<SkipRecord>),
    #[error("no document could be indexed")]
    NothingIndexed,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("index format version {found} is not supported (this build reads version {supported})")]
    Incompatible { found: u32, supported: u32 },
    #[error("index file {file} is corrupt: {reason}")]
    Corrupt { file: String, reason: String },
    #[error("index structure is inconsistent: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeUnit {
    #[default]
    Tokens,
    Characters,
}

impl SizeUnit {
    fn token_mode(self) -> TokenMode {
        match self {
            SizeUnit::Tokens => TokenMode::Whitespace,
            SizeUnit::Characters => TokenMode::Character,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexConfig {
    pub chunk_size: usize,
    pub chunk_overlap: usize,
    pub chunk_unit: SizeUnit,
    /// Characters.
    pub slice_size: usize,
    /// Characters.
    pub slice_overlap: usize,
    /// Also embed raw chunks into a secondary store.
    pub embed_chunks: bool,
    /// Also embed whole summaries into a secondary store.
    pub embed_summaries: bool,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            chunk_size: 400,
            chunk_overlap: 100,
            chunk_unit: SizeUnit::Tokens,
            slice_size: 450,
            slice_overlap: 300,
            embed_chunks: false,
            embed_summaries: false,
        }
    }
}

impl IndexConfig {
    pub fn validate(&self) -> Result<(), IndexError> {
        if self.chunk_size == 0 || self.slice_size == 0 {
            return Err(IndexError::Config("sizes must be positive".into()));
        }
        if self.chunk_overlap >= self.chunk_size {
            return Err(IndexError::Config(format!(
                "chunk_overlap {} must be smaller than chunk_size {}",
                self.chunk_overlap, self.chunk_size
            )));
        }
        if self.slice_overlap >= self.slice_size {
            return Err(IndexError::Config(format!(
                "slice_overlap {} must be smaller than slice_size {}",
                self.slice_overlap, self.slice_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChunkRef {
    pub doc_id: String,
    pub chunk_id: usize,
}

impl ChunkRef {
    pub fn new(doc_id: impl Into<String>, chunk_id: usize) -> Self {
        Self {
            doc_id: doc_id.into(),
            chunk_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SliceRef {
    pub doc_id: String,
    pub chunk_id: usize,
    pub slice_id: usize,
}

impl SliceRef {
    pub fn new(doc_id: impl Into<String>, chunk_id: usize, slice_id: usize) -> Self {
        Self {
            doc_id: doc_id.into(),
            chunk_id,
            slice_id,
        }
    }

    pub fn chunk_ref(&self) -> ChunkRef {
        ChunkRef::new(self.doc_id.clone(), self.chunk_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub chunk_id: usize,
    /// Character offsets into the document text.
    #[serde(flatten)]
    pub span: TokenSpan,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub doc_id: String,
    pub chunk_id: usize,
    pub text: String,
    /// Set when the summarizer output was rejected and the chunk head used.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slice {
    pub doc_id: String,
    pub chunk_id: usize,
    pub slice_id: usize,
    /// Character offsets into the summary text.
    #[serde(flatten)]
    pub span: TokenSpan,
    pub text: String,
}

impl Slice {
    pub fn slice_ref(&self) -> SliceRef {
        SliceRef::new(self.doc_id.clone(), self.chunk_id, self.slice_id)
    }
}

/// A document dropped from a lenient build.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub doc_id: String,
    pub reason: String,
}

impl std::fmt::Display for SkipRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.doc_id, self.reason)
    }
}

/// Sliding windows `[start, end)` over `n` units. The last window is clipped
/// to `n`; windows that would fall entirely inside the previous one are not
/// emitted.
pub fn windows(n: usize, size: usize, overlap: usize) -> Vec<(usize, usize)> {
    debug_assert!(overlap < size);
    let stride = size - overlap;
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    let mut start = 0;
    loop {
        let end = (start + size).min(n);
        out.push((start, end));
        if end == n {
            break;
        }
        start += stride;
    }
    out
}

/// Splits a document into overlapping chunks.
///
/// Spans are in document character coordinates. The first chunk starts at 0
/// and the last ends at the text length so leading and trailing whitespace
/// is covered as well.
pub fn chunk_document(doc: &Document, cfg: &IndexConfig) -> Vec<Chunk> {
    let idx = CharIndexed::new(&doc.text);
    let toks = tokenize(&doc.text, cfg.chunk_unit.token_mode());
    let wins = windows(toks.len(), cfg.chunk_size, cfg.chunk_overlap);
    let last = wins.len().saturating_sub(1);
    wins.iter()
        .enumerate()
        .map(|(i, &(s, e))| {
            let start = if i == 0 { 0 } else { toks[s].start };
            let end = if i == last { idx.char_len() } else { toks[e - 1].end };
            let span = TokenSpan::new(start, end);
            Chunk {
                doc_id: doc.doc_id.clone(),
                chunk_id: i,
                span,
                text: idx.slice(span).to_string(),
            }
        })
        .collect()
}

/// Summarizes one chunk, falling back to the chunk head when the summarizer
/// output is empty or longer than 1.2x the chunk.
pub fn compress_chunk(chunk: &Chunk, summarizer: &dyn Summarizer) -> Result<Summary, IndexError> {
    let out = summarizer
        .summarize(&chunk.text)
        .map_err(|source| IndexError::Summarize {
            doc_id: chunk.doc_id.clone(),
            chunk_id: chunk.chunk_id,
            source,
        })?;
    let chunk_len = chunk.text.chars().count();
    let out_len = out.chars().count();
    let (num, den) = SUMMARY_MAX_RATIO;
    let accepted = !out.trim().is_empty() && out_len * den <= chunk_len * num;
    let (text, fallback) = if accepted {
        (out, false)
    } else {
        tracing::debug!(doc = %chunk.doc_id, chunk = chunk.chunk_id, "summary rejected, using chunk head");
        (
            chunk.text.trim_start().chars().take(FALLBACK_SUMMARY_CHARS).collect(),
            true,
        )
    };
    Ok(Summary {
        doc_id: chunk.doc_id.clone(),
        chunk_id: chunk.chunk_id,
        text,
        fallback,
    })
}

/// Character sliding window over a summary.
pub fn slice_summary(summary: &Summary, cfg: &IndexConfig) -> Vec<Slice> {
    let idx = CharIndexed::new(&summary.text);
    windows(idx.char_len(), cfg.slice_size, cfg.slice_overlap)
        .into_iter()
        .enumerate()
        .map(|(j, (s, e))| {
            let span = TokenSpan::new(s, e);
            Slice {
                doc_id: summary.doc_id.clone(),
                chunk_id: summary.chunk_id,
                slice_id: j,
                span,
                text: idx.slice(span).to_string(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BuildMode {
    /// Any failed document aborts the build.
    #[default]
    Strict,
    /// Failed documents are skipped and recorded.
    Lenient,
}

pub struct IndexServices<'a> {
    pub summarizer: &'a dyn Summarizer,
    pub embedder: &'a dyn Embedder,
}

impl<'a> From<&'a crate::services::Services> for IndexServices<'a> {
    fn from(s: &'a crate::services::Services) -> Self {
        Self {
            summarizer: s.summarizer.as_ref(),
            embedder: s.embedder.as_ref(),
        }
    }
}

struct DocArtifacts {
    chunks: Vec<Chunk>,
    summaries: Vec<Summary>,
    slices: Vec<Slice>,
    slice_vecs: Vec<Vector>,
    chunk_vecs: Option<Vec<Vector>>,
    summary_vecs: Option<Vec<Vector>>,
}

fn embed_checked(embedder: &dyn Embedder, doc_id: &str, texts: Vec<String>) -> Result<Vec<Vector>, IndexError> {
    let n = texts.len();
    let vecs = embedder.embed(&texts).map_err(|source| IndexError::Embed {
        doc_id: doc_id.to_string(),
        source,
    })?;
    if vecs.len() != n {
        return Err(IndexError::EmbedCount {
            doc_id: doc_id.to_string(),
            expected: n,
            got: vecs.len(),
        });
    }
    Ok(vecs)
}

fn index_document(doc: &Document, cfg: &IndexConfig, svc: &IndexServices<'_>) -> Result<DocArtifacts, IndexError> {
    let chunks = chunk_document(doc, cfg);
    let summaries = chunks
        .iter()
        .map(|c| compress_chunk(c, svc.summarizer))
        .collect::<Result<Vec<_>, _>>()?;
    let slices: Vec<Slice> = summaries.iter().flat_map(|s| slice_summary(s, cfg)).collect();
    let slice_vecs = embed_checked(svc.embedder, &doc.doc_id, slices.iter().map(|s| s.text.clone()).collect())?;
    let chunk_vecs = cfg
        .embed_chunks
        .then(|| embed_checked(svc.embedder, &doc.doc_id, chunks.iter().map(|c| c.text.clone()).collect()))
        .transpose()?;
    let summary_vecs = cfg
        .embed_summaries
        .then(|| embed_checked(svc.embedder, &doc.doc_id, summaries.iter().map(|s| s.text.clone()).collect()))
        .transpose()?;
    Ok(DocArtifacts {
        chunks,
        summaries,
        slices,
        slice_vecs,
        chunk_vecs,
        summary_vecs,
    })
}

pub fn corpus_fingerprint(docs: &[Document]) -> String {
    let mut h = Sha256::new();
    for d in docs {
        h.update(serde_json::to_vec(d).expect("documents serialize"));
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Builds the full hierarchy. Documents are processed in parallel; the
/// resulting order is always corpus order, then chunk id, then slice id.
pub fn build_index(
    corpus: &Corpus,
    cfg: &IndexConfig,
    svc: &IndexServices<'_>,
    mode: BuildMode,
) -> Result<HierIndex, IndexError> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(IndexError::NothingIndexed);
    }
    let results: Vec<Result<DocArtifacts, IndexError>> = corpus
        .docs()
        .par_iter()
        .map(|d| index_document(d, cfg, svc))
        .collect();

    let mut failures = Vec::new();
    let mut kept = Vec::new();
    for (doc, res) in corpus.docs().iter().zip(results) {
        match res {
            Ok(a) => kept.push((doc.clone(), a)),
            Err(e) => failures.push(SkipRecord {
                doc_id: doc.doc_id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    if !failures.is_empty() && mode == BuildMode::Strict {
        return Err(IndexError::DocumentsFailed(failures));
    }
    for f in &failures {
        tracing::warn!(doc = %f.doc_id, reason = %f.reason, "skipping document");
    }
    if kept.is_empty() {
        return Err(IndexError::NothingIndexed);
    }

    let dim = svc.embedder.dim();
    let mut store = VectorStore::new(dim);
    let mut chunk_store = cfg.embed_chunks.then(|| VectorStore::new(dim));
    let mut summary_store = cfg.embed_summaries.then(|| VectorStore::new(dim));
    let mut docs = Vec::with_capacity(kept.len());
    let mut chunks = Vec::new();
    let mut summaries = Vec::new();
    let mut slices = Vec::new();
    for (doc, a) in kept {
        for (s, v) in a.slices.iter().zip(&a.slice_vecs) {
            store.push(s.slice_ref(), v)?;
        }
        if let (Some(st), Some(vs)) = (chunk_store.as_mut(), &a.chunk_vecs) {
            for (c, v) in a.chunks.iter().zip(vs) {
                st.push(ChunkRef::new(c.doc_id.clone(), c.chunk_id), v)?;
            }
        }
        if let (Some(st), Some(vs)) = (summary_store.as_mut(), &a.summary_vecs) {
            for (s, v) in a.summaries.iter().zip(vs) {
                st.push(ChunkRef::new(s.doc_id.clone(), s.chunk_id), v)?;
            }
        }
        docs.push(doc);
        chunks.extend(a.chunks);
        summaries.extend(a.summaries);
        slices.extend(a.slices);
    }

    HierIndex::from_parts(IndexParts {
        config: cfg.clone(),
        embedder_id: svc.embedder.id(),
        corpus_fingerprint: corpus_fingerprint(corpus.docs()),
        docs,
        chunks,
        summaries,
        slices,
        store,
        chunk_store,
        summary_store,
        skipped: failures,
    })
}

pub struct IndexParts {
    pub config: IndexConfig,
    pub embedder_id: String,
    pub corpus_fingerprint: String,
    pub docs: Vec<Document>,
    pub chunks: Vec<Chunk>,
    pub summaries: Vec<Summary>,
    pub slices: Vec<Slice>,
    pub store: VectorStore<SliceRef>,
    pub chunk_store: Option<VectorStore<ChunkRef>>,
    pub summary_store: Option<VectorStore<ChunkRef>>,
    pub skipped: Vec<SkipRecord>,
}

/// The frozen four-level hierarchy plus the slice vector store.
#[derive(Debug, Clone, PartialEq)]
pub struct HierIndex {
    config: IndexConfig,
    embedder_id: String,
    corpus_fingerprint: String,
    docs: Vec<Document>,
    chunks: Vec<Chunk>,
    summaries: Vec<Summary>,
    slices: Vec<Slice>,
    store: VectorStore<SliceRef>,
    chunk_store: Option<VectorStore<ChunkRef>>,
    summary_store: Option<VectorStore<ChunkRef>>,
    skipped: Vec<SkipRecord>,
    doc_pos: HashMap<String, usize>,
    // chunks of doc i are chunks[chunk_offsets[i]..chunk_offsets[i + 1]]
    chunk_offsets: Vec<usize>,
    // slices of chunk g are slices[slice_offsets[g]..slice_offsets[g + 1]]
    slice_offsets: Vec<usize>,
}

impl HierIndex {
    /// Assembles an index and checks every structural invariant.
    pub fn from_parts(p: IndexParts) -> Result<Self, IndexError> {
        let bad = |m: String| Err(IndexError::Inconsistent(m));
        let mut doc_pos = HashMap::with_capacity(p.docs.len());
        for (i, d) in p.docs.iter().enumerate() {
            if doc_pos.insert(d.doc_id.clone(), i).is_some() {
                return bad(format!("duplicate document {}", d.doc_id));
            }
        }
        if p.summaries.len() != p.chunks.len() {
            return bad(format!("{} summaries for {} chunks", p.summaries.len(), p.chunks.len()));
        }

        let mut chunk_offsets = vec![0usize; p.docs.len() + 1];
        let mut cursor = 0;
        for (i, d) in p.docs.iter().enumerate() {
            let mut next_id = 0;
            while cursor < p.chunks.len() && p.chunks[cursor].doc_id == d.doc_id {
                let (c, s) = (&p.chunks[cursor], &p.summaries[cursor]);
                if c.chunk_id != next_id || s.doc_id != c.doc_id || s.chunk_id != c.chunk_id {
                    return bad(format!("chunk/summary sequence broken at {}/{}", c.doc_id, c.chunk_id));
                }
                if s.text.is_empty() {
                    return bad(format!("empty summary for {}/{}", c.doc_id, c.chunk_id));
                }
                next_id += 1;
                cursor += 1;
            }
            if next_id == 0 {
                return bad(format!("document {} has no chunks", d.doc_id));
            }
            chunk_offsets[i + 1] = cursor;
        }
        if cursor != p.chunks.len() {
            return bad(format!("chunk {} belongs to no document in order", cursor));
        }

        let mut slice_offsets = vec![0usize; p.chunks.len() + 1];
        let mut cursor = 0;
        for (g, c) in p.chunks.iter().enumerate() {
            let mut next_id = 0;
            while cursor < p.slices.len()
                && p.slices[cursor].doc_id == c.doc_id
                && p.slices[cursor].chunk_id == c.chunk_id
            {
                if p.slices[cursor].slice_id != next_id {
                    return bad(format!("slice ids of {}/{} are not consecutive", c.doc_id, c.chunk_id));
                }
                next_id += 1;
                cursor += 1;
            }
            slice_offsets[g + 1] = cursor;
        }
        if cursor != p.slices.len() {
            return bad(format!("slice {} resolves to no chunk", cursor));
        }
        if p.store.len() != p.slices.len() || p.store.keys().iter().zip(&p.slices).any(|(k, s)| *k != s.slice_ref()) {
            return bad("vector rows are not aligned with slices".into());
        }
        Ok(Self {
            config: p.config,
            embedder_id: p.embedder_id,
            corpus_fingerprint: p.corpus_fingerprint,
            docs: p.docs,
            chunks: p.chunks,
            summaries: p.summaries,
            slices: p.slices,
            store: p.store,
            chunk_store: p.chunk_store,
            summary_store: p.summary_store,
            skipped: p.skipped,
            doc_pos,
            chunk_offsets,
            slice_offsets,
        })
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder_id
    }

    pub fn corpus_fingerprint(&self) -> &str {
        &self.corpus_fingerprint
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.doc_pos.get(doc_id).map(|&i| &self.docs[i])
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn summaries(&self) -> &[Summary] {
        &self.summaries
    }

    pub fn slices(&self) -> &[Slice] {
        &self.slices
    }

    pub fn store(&self) -> &VectorStore<SliceRef> {
        &self.store
    }

    pub fn chunk_store(&self) -> Option<&VectorStore<ChunkRef>> {
        self.chunk_store.as_ref()
    }

    pub fn summary_store(&self) -> Option<&VectorStore<ChunkRef>> {
        self.summary_store.as_ref()
    }

    pub fn skipped(&self) -> &[SkipRecord] {
        &self.skipped
    }

    pub fn doc_chunks(&self, doc_id: &str) -> &[Chunk] {
        match self.doc_pos.get(doc_id) {
            Some(&i) => &self.chunks[self.chunk_offsets[i]..self.chunk_offsets[i + 1]],
            None => &[],
        }
    }

    pub fn chunk_count(&self, doc_id: &str) -> usize {
        self.doc_chunks(doc_id).len()
    }

    fn chunk_global(&self, doc_id: &str, chunk_id: usize) -> Option<usize> {
        let i = *self.doc_pos.get(doc_id)?;
        let g = self.chunk_offsets[i] + chunk_id;
        (g < self.chunk_offsets[i + 1]).then_some(g)
    }

    pub fn chunk(&self, doc_id: &str, chunk_id: usize) -> Option<&Chunk> {
        self.chunk_global(doc_id, chunk_id).map(|g| &self.chunks[g])
    }

    pub fn summary(&self, doc_id: &str, chunk_id: usize) -> Option<&Summary> {
        self.chunk_global(doc_id, chunk_id).map(|g| &self.summaries[g])
    }

    pub fn chunk_slices(&self, doc_id: &str, chunk_id: usize) -> &[Slice] {
        match self.chunk_global(doc_id, chunk_id) {
            Some(g) => &self.slices[self.slice_offsets[g]..self.slice_offsets[g + 1]],
            None => &[],
        }
    }

    pub fn resolve_slice(&self, r: &SliceRef) -> Option<&Slice> {
        self.chunk_slices(&r.doc_id, r.chunk_id).get(r.slice_id)
    }
}
