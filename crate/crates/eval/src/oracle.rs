//! Brute-force reference for the retrieval pipeline.
//!
//! Rebuilds chunks, summaries and slices into flat lists, scores every
//! slice, and sorts everything explicitly. Nothing here touches the
//! engine's index, store or retriever code; only the model stand-ins are
//! shared.

use std::cmp::Ordering;

use mscale_core::corpus::TokenSpan;
use mscale_core::index::{ChunkRef, SizeUnit, SliceRef};
use mscale_core::retriever::{MergedChunk, RankedChunk, RankedDoc, RetrievalTrace, Segment};
use mscale_core::store::Hit;
use mscale_core::{
    Corpus, DocAggregation, IndexConfig, Metric, RetrievalConfig, RetrievalResult, ServiceError, Services,
};

pub const ORACLE_MAX_DOCS: usize = 50;

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("oracle corpus has {0} documents, the limit is {ORACLE_MAX_DOCS}")]
    CorpusTooLarge(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty query")]
    EmptyQuery,
    #[error("zero query vector under cosine")]
    ZeroQuery,
    #[error(transparent)]
    Service(#[from] ServiceError),
}

struct OChunk {
    doc: usize,
    id: usize,
    start: usize,
    end: usize,
    text: String,
}

struct OSlice {
    key: SliceRef,
    text: String,
}

fn substring(chars: &[char], start: usize, end: usize) -> String {
    chars[start..end].iter().collect()
}

/// Unit boundaries as (start, end) char offsets.
fn units(chars: &[char], unit: SizeUnit) -> Vec<(usize, usize)> {
    match unit {
        SizeUnit::Characters => (0..chars.len()).map(|i| (i, i + 1)).collect(),
        SizeUnit::Tokens => {
            let mut out = Vec::new();
            let mut i = 0;
            while i < chars.len() {
                if chars[i].is_whitespace() {
                    i += 1;
                    continue;
                }
                let s = i;
                while i < chars.len() && !chars[i].is_whitespace() {
                    i += 1;
                }
                out.push((s, i));
            }
            out
        }
    }
}

/// Window starts 0, stride, 2*stride, ... until a window reaches `n`.
fn window_bounds(n: usize, size: usize, overlap: usize) -> Vec<(usize, usize)> {
    let stride = size - overlap;
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    for k in 0.. {
        let s = k * stride;
        let e = if s + size > n { n } else { s + size };
        out.push((s, e));
        if e == n {
            break;
        }
    }
    out
}

fn better(a_score: f64, b_score: f64) -> Ordering {
    b_score.total_cmp(&a_score)
}

fn norm(v: &[f32]) -> f64 {
    let mut acc = Vec::with_capacity(v.len());
    for &x in v {
        acc.push(f64::from(x) * f64::from(x));
    }
    acc.into_iter().sum::<f64>().sqrt()
}

fn score(metric: Metric, q: &[f32], v: &[f32]) -> f64 {
    match metric {
        Metric::Cosine => {
            let (nq, nv) = (norm(q), norm(v));
            if nq == 0.0 || nv == 0.0 {
                return 0.0;
            }
            let mut terms = Vec::with_capacity(q.len());
            for i in 0..q.len() {
                terms.push(f64::from(q[i]) * f64::from(v[i]));
            }
            terms.into_iter().sum::<f64>() / (nq * nv)
        }
        Metric::L2 => {
            let mut terms = Vec::with_capacity(q.len());
            for i in 0..q.len() {
                let d = f64::from(q[i]) - f64::from(v[i]);
                terms.push(d * d);
            }
            -terms.into_iter().sum::<f64>().sqrt()
        }
    }
}

fn aggregate(agg: DocAggregation, scores: &[f64]) -> f64 {
    match agg {
        DocAggregation::Max => {
            let mut m = scores[0];
            for &s in &scores[1..] {
                m = m.max(s);
            }
            m
        }
        DocAggregation::Sum | DocAggregation::Mean => {
            let mut t = scores[0];
            for &s in &scores[1..] {
                t += s;
            }
            if agg == DocAggregation::Mean {
                t / scores.len() as f64
            } else {
                t
            }
        }
    }
}

/// Recomputes the whole pipeline for one query from the raw corpus.
pub fn oracle_retrieve(
    query: &str,
    corpus: &Corpus,
    index_cfg: &IndexConfig,
    cfg: &RetrievalConfig,
    services: &Services,
) -> Result<RetrievalResult, OracleError> {
    if corpus.len() > ORACLE_MAX_DOCS {
        return Err(OracleError::CorpusTooLarge(corpus.len()));
    }
    if cfg.k1 == 0 || cfg.k2 == 0 || cfg.k2 > cfg.k1 || cfg.alpha == 0 {
        return Err(OracleError::Config(format!("{cfg:?}")));
    }
    if index_cfg.chunk_overlap >= index_cfg.chunk_size || index_cfg.slice_overlap >= index_cfg.slice_size {
        return Err(OracleError::Config(format!("{index_cfg:?}")));
    }
    if query.trim().is_empty() {
        return Err(OracleError::EmptyQuery);
    }

    // chunks
    let docs = corpus.docs();
    let doc_chars: Vec<Vec<char>> = docs.iter().map(|d| d.text.chars().collect()).collect();
    let mut chunks: Vec<OChunk> = Vec::new();
    for (di, chars) in doc_chars.iter().enumerate() {
        let u = units(chars, index_cfg.chunk_unit);
        let w = window_bounds(u.len(), index_cfg.chunk_size, index_cfg.chunk_overlap);
        for (ci, &(s, e)) in w.iter().enumerate() {
            let start = if ci == 0 { 0 } else { u[s].0 };
            let end = if ci + 1 == w.len() { chars.len() } else { u[e - 1].1 };
            chunks.push(OChunk {
                doc: di,
                id: ci,
                start,
                end,
                text: substring(chars, start, end),
            });
        }
    }

    // summaries and slices
    let mut slices: Vec<OSlice> = Vec::new();
    for c in &chunks {
        let out = services.summarizer.summarize(&c.text)?;
        let chunk_len = c.text.chars().count() as f64;
        let ok = !out.trim().is_empty() && (out.chars().count() as f64) <= 1.2 * chunk_len + 1e-9;
        let summary: Vec<char> = if ok {
            out.chars().collect()
        } else {
            c.text.trim_start().chars().take(1000).collect()
        };
        for (j, (s, e)) in window_bounds(summary.len(), index_cfg.slice_size, index_cfg.slice_overlap)
            .into_iter()
            .enumerate()
        {
            slices.push(OSlice {
                key: SliceRef::new(docs[c.doc].doc_id.clone(), c.id, j),
                text: substring(&summary, s, e),
            });
        }
    }

    // exhaustive slice scoring
    let q = services.embedder.embed(&[query.to_string()])?.remove(0);
    if cfg.metric == Metric::Cosine && norm(q.as_slice()) == 0.0 {
        return Err(OracleError::ZeroQuery);
    }
    let mut hits: Vec<Hit<SliceRef>> = Vec::with_capacity(slices.len());
    for s in &slices {
        let v = services.embedder.embed(std::slice::from_ref(&s.text))?.remove(0);
        hits.push(Hit {
            key: s.key.clone(),
            score: score(cfg.metric, q.as_slice(), v.as_slice()),
        });
    }
    hits.sort_by(|a, b| better(a.score, b.score).then_with(|| a.key.cmp(&b.key)));
    hits.truncate(cfg.k1);

    // parents
    let mut candidates: Vec<ChunkRef> = Vec::new();
    for h in &hits {
        let c = ChunkRef::new(h.key.doc_id.clone(), h.key.chunk_id);
        if !candidates.contains(&c) {
            candidates.push(c);
        }
    }

    let chunk_of = |r: &ChunkRef| {
        chunks
            .iter()
            .find(|c| docs[c.doc].doc_id == r.doc_id && c.id == r.chunk_id)
            .expect("candidate comes from the chunk list")
    };

    // rerank
    let mut reranked: Vec<RankedChunk> = Vec::new();
    if !candidates.is_empty() {
        let passages: Vec<&str> = candidates.iter().map(|c| chunk_of(c).text.as_str()).collect();
        let scores = services.reranker.score(query, &passages)?;
        for (c, s) in candidates.iter().zip(scores) {
            reranked.push(RankedChunk {
                chunk_ref: c.clone(),
                score: s,
            });
        }
        reranked.sort_by(|a, b| better(a.score, b.score).then_with(|| a.chunk_ref.cmp(&b.chunk_ref)));
    }

    // scale-up
    let alpha = if cfg.enable_scale_up { cfg.alpha } else { 1 };
    let take = (cfg.k2 * alpha).min(reranked.len());
    let scaled: Vec<RankedChunk> = reranked[..take].to_vec();

    // documents
    let mut doc_order: Vec<String> = Vec::new();
    for c in &scaled {
        if !doc_order.contains(&c.chunk_ref.doc_id) {
            doc_order.push(c.chunk_ref.doc_id.clone());
        }
    }
    let mut ranked_docs: Vec<RankedDoc> = doc_order
        .iter()
        .map(|d| {
            let contributing: Vec<RankedChunk> =
                scaled.iter().filter(|c| &c.chunk_ref.doc_id == d).cloned().collect();
            let scores: Vec<f64> = contributing.iter().map(|c| c.score).collect();
            RankedDoc {
                doc_id: d.clone(),
                score: aggregate(cfg.doc_agg, &scores),
                contributing_chunks: contributing,
            }
        })
        .collect();
    ranked_docs.sort_by(|a, b| better(a.score, b.score).then_with(|| a.doc_id.cmp(&b.doc_id)));
    ranked_docs.truncate(cfg.k2);

    // neighbor coverage and merging
    let hop = if cfg.enable_propagation_merge { cfg.hop } else { 0 };
    let mut merged = Vec::new();
    for (rank, d) in ranked_docs.iter().enumerate() {
        let di = docs.iter().position(|x| x.doc_id == d.doc_id).expect("ranked doc exists");
        let own: Vec<&OChunk> = chunks.iter().filter(|c| c.doc == di).collect();
        let m = own.len();
        let mut covered = vec![false; m];
        for c in &d.contributing_chunks {
            let i = c.chunk_ref.chunk_id as i64;
            for j in (i - hop as i64)..=(i + hop as i64) {
                if j >= 0 && (j as usize) < m {
                    covered[j as usize] = true;
                }
            }
        }
        let mut runs: Vec<(usize, usize)> = Vec::new();
        let mut i = 0;
        while i < m {
            if covered[i] {
                let lo = i;
                while i + 1 < m && covered[i + 1] {
                    i += 1;
                }
                runs.push((lo, i));
            }
            i += 1;
        }
        // runs whose text overlaps still collapse into one segment
        let mut joined: Vec<(usize, usize)> = Vec::new();
        for (lo, hi) in runs {
            if let Some(last) = joined.last_mut() {
                if own[lo].start < own[last.1].end {
                    last.1 = hi;
                    continue;
                }
            }
            joined.push((lo, hi));
        }
        let segments = joined
            .into_iter()
            .map(|(lo, hi)| Segment {
                lo,
                hi,
                span: TokenSpan::new(own[lo].start, own[hi].end),
                text: substring(&doc_chars[di], own[lo].start, own[hi].end),
            })
            .collect();
        merged.push(MergedChunk {
            doc_id: d.doc_id.clone(),
            rank,
            doc_score: d.score,
            segments,
            source_chunks: d.contributing_chunks.clone(),
        });
    }

    Ok(RetrievalResult {
        query: query.to_string(),
        merged,
        trace: RetrievalTrace {
            slice_hits: hits,
            candidates,
            reranked,
            scaled,
            ranked_docs,
        },
    })
}
