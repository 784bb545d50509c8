//! Bottom-up multi-scale retrieval: slice search → parent chunks → chunk
//! rerank → scaled top chunks → document ranking → h-hop neighbor merge.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{CharIndexed, TokenSpan};
use crate::index::{ChunkRef, HierIndex, SliceRef};
use crate::services::{Embedder, Reranker, ServiceError};
use crate::store::{rank_order, Hit, Metric, StoreError};

pub type SliceHit = Hit<SliceRef>;

/// Separator placed between non-contiguous segments of one merged chunk.
pub const SEGMENT_SEPARATOR: &str = "\n...\n";

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("invalid retrieval config: {0}")]
    Config(String),
    #[error("query is empty")]
    EmptyQuery,
    #[error("query embedder {query} does not match index embedder {index}")]
    EmbedderMismatch { index: String, query: String },
    #[error("embedding the query failed: {0}")]
    Embed(#[source] ServiceError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("slice {0:?} does not resolve in the index")]
    DanglingSlice(SliceRef),
    #[error("chunk {0:?} does not resolve in the index")]
    DanglingChunk(ChunkRef),
    #[error("reranking failed: {0}")]
    Rerank(#[source] ServiceError),
    #[error("reranker returned {got} scores for {expected} passages")]
    RerankCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocAggregation {
    #[default]
    Max,
    Mean,
    Sum,
}

impl DocAggregation {
    /// Aggregates in the given order; the order matters for `mean`/`sum`
    /// bit-exactness.
    pub fn apply(self, scores: impl IntoIterator<Item = f64>) -> f64 {
        let mut n = 0usize;
        let mut acc: Option<f64> = None;
        for s in scores {
            n += 1;
            acc = Some(match (self, acc) {
                (_, None) => s,
                (DocAggregation::Max, Some(a)) => a.max(s),
                (_, Some(a)) => a + s,
            });
        }
        let acc = acc.unwrap_or(f64::NEG_INFINITY);
        match self {
            DocAggregation::Mean if n > 0 => acc / n as f64,
            _ => acc,
        }
    }
}

impl std::str::FromStr for DocAggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max" => Ok(Self::Max),
            "mean" => Ok(Self::Mean),
            "sum" => Ok(Self::Sum),
            other => Err(format!("unknown aggregation {other:?} (expected max, mean or sum)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    /// Slices fetched from the vector store.
    pub k1: usize,
    /// Distinct documents (merged chunks) returned.
    pub k2: usize,
    /// Scale-up factor: `k2 * alpha` reranked chunks feed document ranking.
    pub alpha: usize,
    /// Neighbor hops merged around each qualifying chunk.
    pub hop: usize,
    pub doc_agg: DocAggregation,
    pub enable_scale_up: bool,
    pub enable_propagation_merge: bool,
    pub metric: Metric,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k1: 100,
            k2: 7,
            alpha: 4,
            hop: 1,
            doc_agg: DocAggregation::Max,
            enable_scale_up: true,
            enable_propagation_merge: true,
            metric: Metric::Cosine,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.k1 == 0 || self.k2 == 0 {
            return Err(RetrievalError::Config("k1 and k2 must be positive".into()));
        }
        if self.k2 > self.k1 {
            return Err(RetrievalError::Config(format!("k2 ({}) must not exceed k1 ({})", self.k2, self.k1)));
        }
        if self.alpha == 0 {
            return Err(RetrievalError::Config("alpha must be at least 1".into()));
        }
        Ok(())
    }

    /// Alpha actually applied; 1 when scale-up is disabled.
    pub fn effective_alpha(&self) -> usize {
        if self.enable_scale_up {
            self.alpha
        } else {
            1
        }
    }

    /// Hops actually applied; 0 when propagation/merging is disabled.
    pub fn effective_hop(&self) -> usize {
        if self.enable_propagation_merge {
            self.hop
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedChunk {
    pub chunk_ref: ChunkRef,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDoc {
    pub doc_id: String,
    pub score: f64,
    pub contributing_chunks: Vec<RankedChunk>,
}

/// A maximal run of chunks `[lo, hi]` rendered as original document text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub lo: usize,
    pub hi: usize,
    pub span: TokenSpan,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedChunk {
    pub doc_id: String,
    /// 0-based position in the final list.
    pub rank: usize,
    pub doc_score: f64,
    pub segments: Vec<Segment>,
    /// Qualifying chunks that seeded the segments, in rank order.
    pub source_chunks: Vec<RankedChunk>,
}

impl MergedChunk {
    /// Segment texts joined with [`SEGMENT_SEPARATOR`].
    pub fn render(&self) -> String {
        self.segments
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join(SEGMENT_SEPARATOR)
    }

    /// Characters of original text covered (separators excluded).
    pub fn char_len(&self) -> usize {
        self.segments.iter().map(|s| s.span.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RetrievalTrace {
    pub slice_hits: Vec<SliceHit>,
    pub candidates: Vec<ChunkRef>,
    pub reranked: Vec<RankedChunk>,
    pub scaled: Vec<RankedChunk>,
    pub ranked_docs: Vec<RankedDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query: String,
    pub merged: Vec<MergedChunk>,
    pub trace: RetrievalTrace,
}

/// Embeds the query and returns the top-`k1` slices.
pub fn retrieve_slices(
    query: &str,
    index: &HierIndex,
    embedder: &dyn Embedder,
    k1: usize,
    metric: Metric,
) -> Result<Vec<SliceHit>, RetrievalError> {
    if query.trim().is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    let qv = embedder.embed_one(query).map_err(RetrievalError::Embed)?;
    Ok(index.store().search(&qv, k1, metric)?)
}

/// Distinct parent chunks of `hits`, in first-appearance order.
pub fn map_to_parent_chunks(hits: &[SliceHit], index: &HierIndex) -> Result<Vec<ChunkRef>, RetrievalError> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for h in hits {
        if index.resolve_slice(&h.key).is_none() {
            return Err(RetrievalError::DanglingSlice(h.key.clone()));
        }
        let c = h.key.chunk_ref();
        if seen.insert(c.clone()) {
            out.push(c);
        }
    }
    Ok(out)
}

/// Scores each candidate's full chunk text against the query and sorts best
/// first (ties by chunk identity).
pub fn rerank_chunks(
    query: &str,
    candidates: &[ChunkRef],
    index: &HierIndex,
    reranker: &dyn Reranker,
) -> Result<Vec<RankedChunk>, RetrievalError> {
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let passages = candidates
        .iter()
        .map(|c| {
            index
                .chunk(&c.doc_id, c.chunk_id)
                .map(|ch| ch.text.as_str())
                .ok_or_else(|| RetrievalError::DanglingChunk(c.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let scores = reranker.score(query, &passages).map_err(RetrievalError::Rerank)?;
    if scores.len() != candidates.len() {
        return Err(RetrievalError::RerankCount {
            expected: candidates.len(),
            got: scores.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(RetrievalError::Rerank(ServiceError::InvalidResponse("non-finite score".into())));
    }
    let mut ranked: Vec<RankedChunk> = candidates
        .iter()
        .cloned()
        .zip(scores)
        .map(|(chunk_ref, score)| RankedChunk { chunk_ref, score })
        .collect();
    ranked.sort_by(|a, b| rank_order(a.score, &a.chunk_ref, b.score, &b.chunk_ref));
    Ok(ranked)
}

/// Top `k2 * alpha` prefix of an already sorted ranking.
pub fn scale_up_select(ranked: &[RankedChunk], k2: usize, alpha: usize) -> Vec<RankedChunk> {
    let n = k2.saturating_mul(alpha.max(1)).min(ranked.len());
    ranked[..n].to_vec()
}

/// Groups scaled chunks by document, scores each document with `agg`, and
/// keeps the best `k2` distinct documents.
pub fn rank_documents(scaled: &[RankedChunk], k2: usize, agg: DocAggregation) -> Vec<RankedDoc> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<RankedChunk>> = HashMap::new();
    for c in scaled {
        let id = c.chunk_ref.doc_id.as_str();
        groups
            .entry(id)
            .or_insert_with(|| {
                order.push(id);
                Vec::new()
            })
            .push(c.clone());
    }
    let mut docs: Vec<RankedDoc> = order
        .into_iter()
        .map(|id| {
            let chunks = groups.remove(id).unwrap_or_default();
            RankedDoc {
                doc_id: id.to_string(),
                score: agg.apply(chunks.iter().map(|c| c.score)),
                contributing_chunks: chunks,
            }
        })
        .collect();
    docs.sort_by(|a, b| rank_order(a.score, &a.doc_id, b.score, &b.doc_id));
    docs.truncate(k2);
    docs
}

/// Expands each qualifying chunk to `[i - hop, i + hop]` (clipped), unions
/// intervals that touch or whose text overlaps, and renders every maximal
/// interval as one original-text segment. One merged chunk per document, in
/// document rank order.
pub fn propagate_and_merge(
    ranked_docs: &[RankedDoc],
    scaled: &[RankedChunk],
    hop: usize,
    index: &HierIndex,
) -> Result<Vec<MergedChunk>, RetrievalError> {
    let mut out = Vec::with_capacity(ranked_docs.len());
    for (rank, doc) in ranked_docs.iter().enumerate() {
        let chunks = index.doc_chunks(&doc.doc_id);
        let text = &index
            .document(&doc.doc_id)
            .ok_or_else(|| RetrievalError::DanglingChunk(ChunkRef::new(doc.doc_id.clone(), 0)))?
            .text;
        let qualifying: Vec<RankedChunk> = scaled
            .iter()
            .filter(|c| c.chunk_ref.doc_id == doc.doc_id)
            .cloned()
            .collect();
        let m = chunks.len();
        let mut intervals = Vec::with_capacity(qualifying.len());
        for c in &qualifying {
            let i = c.chunk_ref.chunk_id;
            if i >= m {
                return Err(RetrievalError::DanglingChunk(c.chunk_ref.clone()));
            }
            intervals.push((i.saturating_sub(hop), (i + hop).min(m - 1)));
        }
        intervals.sort_unstable();

        let mut merged: Vec<(usize, usize)> = Vec::new();
        for (lo, hi) in intervals {
            match merged.last_mut() {
                Some((_, cur_hi)) if lo <= *cur_hi + 1 || chunks[lo].span.start < chunks[*cur_hi].span.end => {
                    *cur_hi = (*cur_hi).max(hi);
                }
                _ => merged.push((lo, hi)),
            }
        }

        let idx = CharIndexed::new(text);
        let segments = merged
            .into_iter()
            .map(|(lo, hi)| {
                let span = TokenSpan::new(chunks[lo].span.start, chunks[hi].span.end);
                Segment {
                    lo,
                    hi,
                    span,
                    text: idx.slice(span).to_string(),
                }
            })
            .collect();
        out.push(MergedChunk {
            doc_id: doc.doc_id.clone(),
            rank,
            doc_score: doc.score,
            segments,
            source_chunks: qualifying,
        });
    }
    Ok(out)
}

/// Read-only view used to answer queries over a frozen index.
pub struct Retriever<'a> {
    pub index: &'a HierIndex,
    pub embedder: &'a dyn Embedder,
    pub reranker: &'a dyn Reranker,
}

impl<'a> Retriever<'a> {
    pub fn new(index: &'a HierIndex, embedder: &'a dyn Embedder, reranker: &'a dyn Reranker) -> Self {
        Self {
            index,
            embedder,
            reranker,
        }
    }

    pub fn retrieve(&self, query: &str, cfg: &RetrievalConfig) -> Result<RetrievalResult, RetrievalError> {
        cfg.validate()?;
        if self.embedder.id() != self.index.embedder_id() {
            return Err(RetrievalError::EmbedderMismatch {
                index: self.index.embedder_id().to_string(),
                query: self.embedder.id(),
            });
        }
        let slice_hits = retrieve_slices(query, self.index, self.embedder, cfg.k1, cfg.metric)?;
        let candidates = map_to_parent_chunks(&slice_hits, self.index)?;
        let reranked = rerank_chunks(query, &candidates, self.index, self.reranker)?;
        let scaled = scale_up_select(&reranked, cfg.k2, cfg.effective_alpha());
        let ranked_docs = if scaled.is_empty() {
            Vec::new()
        } else {
            rank_documents(&scaled, cfg.k2, cfg.doc_agg)
        };
        let merged = propagate_and_merge(&ranked_docs, &scaled, cfg.effective_hop(), self.index)?;
        Ok(RetrievalResult {
            query: query.to_string(),
            merged,
            trace: RetrievalTrace {
                slice_hits,
                candidates,
                reranked,
                scaled,
                ranked_docs,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rc(doc: &str, chunk: usize, score: f64) -> RankedChunk {
        RankedChunk {
            chunk_ref: ChunkRef::new(doc, chunk),
            score,
        }
    }

    #[test]
    fn scale_up_examples() {
        let ranked: Vec<RankedChunk> = (0..100).map(|i| rc("d", i, -(i as f64))).collect();
        assert_eq!(scale_up_select(&ranked, 7, 4).len(), 28);
        assert_eq!(scale_up_select(&ranked, 7, 1).len(), 7);
        assert_eq!(scale_up_select(&ranked[..10], 7, 4).len(), 10);
        assert_eq!(scale_up_select(&ranked, 7, 4)[..7], scale_up_select(&ranked, 7, 1)[..]);
    }

    #[test]
    fn doc_ranking_max_and_sum() {
        let scaled = vec![rc("d1", 0, 0.9), rc("d2", 0, 0.7), rc("d1", 1, 0.2)];
        let max = rank_documents(&scaled, 2, DocAggregation::Max);
        assert_eq!((max[0].doc_id.as_str(), max[0].score), ("d1", 0.9));
        assert_eq!((max[1].doc_id.as_str(), max[1].score), ("d2", 0.7));
        assert_eq!(max[0].contributing_chunks.len(), 2);
        let sum = rank_documents(&scaled, 2, DocAggregation::Sum);
        assert!((sum[0].score - 1.1).abs() < 1e-12);
        assert_eq!(sum[0].doc_id, "d1");
        assert_eq!(sum[1].doc_id, "d2");
        let mean = rank_documents(&scaled, 2, DocAggregation::Mean);
        assert_eq!(mean[0].doc_id, "d2");
        assert!((mean[1].score - 0.55).abs() < 1e-12);
    }

    #[test]
    fn doc_ranking_negative_scores() {
        let scaled = vec![rc("d2", 0, -0.5), rc("d1", 0, -0.1)];
        let docs = rank_documents(&scaled, 2, DocAggregation::Max);
        assert_eq!(docs[0].doc_id, "d1");
        assert_eq!(docs[0].score, -0.1);
    }

    #[test]
    fn doc_ranking_truncates_and_breaks_ties_by_id() {
        let scaled = vec![rc("c", 0, 0.1), rc("b", 0, 0.1), rc("a", 0, 0.1)];
        let docs = rank_documents(&scaled, 2, DocAggregation::Max);
        assert_eq!(docs.iter().map(|d| d.doc_id.as_str()).collect::<Vec<_>>(), vec!["a", "b"]);
    }

    #[test]
    fn config_validation() {
        assert!(RetrievalConfig::default().validate().is_ok());
        let bad_alpha = RetrievalConfig {
            alpha: 0,
            ..RetrievalConfig::default()
        };
        assert!(bad_alpha.validate().is_err());
        let bad_k = RetrievalConfig {
            k1: 5,
            k2: 7,
            ..RetrievalConfig::default()
        };
        assert!(bad_k.validate().is_err());
        let off = RetrievalConfig {
            enable_scale_up: false,
            enable_propagation_merge: false,
            ..RetrievalConfig::default()
        };
        assert_eq!((off.effective_alpha(), off.effective_hop()), (1, 0));
    }

    #[test]
    fn aggregation_parse() {
        assert_eq!("sum".parse::<DocAggregation>(), Ok(DocAggregation::Sum));
        assert!("median".parse::<DocAggregation>().is_err());
    }
}
