//! Answer normalization, exact match and bag-of-tokens F1.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Lowercase, drop ASCII punctuation, drop the articles a/an/the, collapse
/// whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// 1 when the normalized prediction equals any normalized gold answer.
pub fn exact_match(pred: &str, golds: &[String]) -> u8 {
    let p = normalize_answer(pred);
    u8::from(golds.iter().any(|g| normalize_answer(g) == p))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct F1Score {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

/// F1 against a single reference. Two empty token lists count as a perfect
/// match so that exact match always implies F1 = 1.
pub fn token_f1_single(pred: &str, gold: &str) -> F1Score {
    let p = normalize_answer(pred);
    let g = normalize_answer(gold);
    let p_toks: Vec<&str> = p.split_whitespace().collect();
    let g_toks: Vec<&str> = g.split_whitespace().collect();
    if p_toks.is_empty() && g_toks.is_empty() {
        return F1Score {
            f1: 1.0,
            precision: 1.0,
            recall: 1.0,
        };
    }
    let mut bag: HashMap<&str, usize> = HashMap::new();
    for t in &g_toks {
        *bag.entry(t).or_default() += 1;
    }
    let mut same = 0usize;
    for t in &p_toks {
        if let Some(n) = bag.get_mut(t) {
            if *n > 0 {
                *n -= 1;
                same += 1;
            }
        }
    }
    if same == 0 {
        return F1Score::default();
    }
    let precision = same as f64 / p_toks.len() as f64;
    let recall = same as f64 / g_toks.len() as f64;
    F1Score {
        f1: 2.0 * precision * recall / (precision + recall),
        precision,
        recall,
    }
}

/// Best F1 over all gold answers; precision and recall come from the same
/// best-scoring gold (first one on ties).
pub fn token_f1(pred: &str, golds: &[String]) -> F1Score {
    let mut best = F1Score::default();
    let mut first = true;
    for g in golds {
        let s = token_f1_single(pred, g);
        if first || s.f1 > best.f1 {
            best = s;
            first = false;
        }
    }
    best
}
