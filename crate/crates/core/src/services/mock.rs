//! Deterministic, offline stand-ins for the model roles. None of them read a
//! clock or a random source, so every pipeline built on them is a pure
//! function of its inputs.

use std::collections::HashSet;

use super::{ChatModel, ChatRequest, Embedder, Reranker, ServiceError, Summarizer};
use crate::store::Vector;

/// Lowercased whitespace tokens with leading/trailing non-alphanumerics
/// stripped; tokens that become empty are dropped.
pub fn terms(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

fn term_set(text: &str) -> HashSet<String> {
    terms(text).into_iter().collect()
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Hashed bag-of-words embedding, L2-normalized. Text without terms maps to
/// the zero vector (see [`Vector::is_zero`]).
pub fn mock_embed(text: &str, dim: usize) -> Vector {
    assert!(dim >= 8, "hash embedder needs at least 8 dimensions");
    let mut counts = vec![0f64; dim];
    for t in terms(text) {
        counts[(fnv1a64(t.as_bytes()) % dim as u64) as usize] += 1.0;
    }
    let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
    let values = if norm == 0.0 {
        vec![0f32; dim]
    } else {
        counts.iter().map(|c| (c / norm) as f32).collect()
    };
    Vector::new(values).expect("finite by construction")
}

#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 8, "hash embedder needs at least 8 dimensions");
        Self { dim }
    }
}

impl Embedder for HashEmbedder {
    fn id(&self) -> String {
        format!("mock-hash-{}", self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vector>, ServiceError> {
        Ok(texts.iter().map(|t| mock_embed(t, self.dim)).collect())
    }
}

pub const MOCK_SUMMARY_LIMIT: usize = 1000;

/// Extractive head summary: the first `limit` characters, cut back to the
/// last sentence end inside that window when there is one.
pub fn mock_summarize(text: &str, limit: usize) -> String {
    let chars: Vec<char> = text.chars().collect();
    if chars.len() <= limit {
        return text.to_string();
    }
    let is_break = |end: usize| {
        matches!(chars[end - 1], '.' | '!' | '?') && chars.get(end).is_none_or(|c| c.is_whitespace())
    };
    let cut = (1..=limit).rev().find(|&end| is_break(end)).unwrap_or(limit);
    chars[..cut].iter().collect()
}

#[derive(Debug, Clone)]
pub struct HeadSummarizer {
    pub limit: usize,
}

impl Default for HeadSummarizer {
    fn default() -> Self {
        Self {
            limit: MOCK_SUMMARY_LIMIT,
        }
    }
}

impl Summarizer for HeadSummarizer {
    fn summarize(&self, text: &str) -> Result<String, ServiceError> {
        Ok(mock_summarize(text, self.limit))
    }
}

/// `|Q ∩ P| / |Q| - 0.5` over term sets; irrelevant passages score negative.
pub fn mock_rerank(query: &str, passages: &[&str]) -> Vec<f64> {
    let q = term_set(query);
    passages
        .iter()
        .map(|p| {
            if q.is_empty() {
                return -0.5;
            }
            let p = term_set(p);
            q.intersection(&p).count() as f64 / q.len() as f64 - 0.5
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalReranker;

impl Reranker for LexicalReranker {
    fn score(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>, ServiceError> {
        Ok(mock_rerank(query, passages))
    }
}

/// Returns the text between `<tag>` and `</tag>`.
pub fn tagged<'a>(prompt: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = prompt.find(&open)? + open.len();
    let end = start + prompt[start..].find(&close)?;
    Some(prompt[start..end].trim_matches('\n'))
}

/// Splits a rendered context block into `(index, body)` parts using the
/// `[[i]] label` header lines emitted by the prompt builder.
pub fn context_parts(context: &str) -> Vec<(usize, String)> {
    let mut parts: Vec<(usize, String)> = Vec::new();
    for line in context.lines() {
        if let Some(idx) = part_header(line) {
            parts.push((idx, String::new()));
        } else if let Some((_, body)) = parts.last_mut() {
            if !body.is_empty() {
                body.push('\n');
            }
            body.push_str(line);
        }
    }
    parts
}

fn part_header(line: &str) -> Option<usize> {
    let rest = line.strip_prefix("[[")?;
    let close = rest.find("]]")?;
    rest[..close].parse().ok()
}

/// Echo model. For filter prompts it keeps every part sharing at least one
/// term with the question; for anything else it returns the first
/// `head_tokens` tokens of the context.
#[derive(Debug, Clone)]
pub struct EchoChat {
    pub head_tokens: usize,
}

impl Default for EchoChat {
    fn default() -> Self {
        Self { head_tokens: 32 }
    }
}

impl EchoChat {
    fn respond(&self, prompt: &str) -> String {
        let context = tagged(prompt, "context").unwrap_or("");
        match tagged(prompt, "task") {
            Some("filter") => {
                let q = term_set(tagged(prompt, "question").unwrap_or(""));
                context_parts(context)
                    .iter()
                    .map(|(i, body)| {
                        let keep = terms(body).iter().any(|t| q.contains(t));
                        format!("[[{i}]] {}", if keep { "keep" } else { "drop" })
                    })
                    .collect::<Vec<_>>()
                    .join("\n")
            }
            _ => {
                let parts = context_parts(context);
                let bodies: Vec<&str> = if parts.is_empty() {
                    vec![context]
                } else {
                    parts.iter().map(|(_, b)| b.as_str()).collect()
                };
                bodies
                    .iter()
                    .flat_map(|b| b.split_whitespace())
                    .take(self.head_tokens)
                    .collect::<Vec<_>>()
                    .join(" ")
            }
        }
    }
}

impl ChatModel for EchoChat {
    fn complete(&self, req: &ChatRequest) -> Result<String, ServiceError> {
        let prompt = req
            .messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .unwrap_or("");
        Ok(self.respond(prompt))
    }
}
