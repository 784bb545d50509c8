//! Exact top-k similarity search over dense vectors.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StoreError {
    #[error("dimension mismatch: store has {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("vector contains a non-finite component")]
    NonFinite,
    #[error("vector has zero dimensions")]
    ZeroDim,
    #[error("search on an empty store")]
    EmptyStore,
    #[error("cosine search with a zero-norm query")]
    ZeroQuery,
    #[error("k must be positive")]
    ZeroK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f32>);

impl Vector {
    pub fn new(values: Vec<f32>) -> Result<Self, StoreError> {
        if values.is_empty() {
            return Err(StoreError::ZeroDim);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(StoreError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    /// True for the all-zero vector, which the hashing embedder produces
    /// for text without any terms.
    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Cosine,
    L2,
}

/// A scored search result. Lists of hits are ordered by score descending,
/// then key ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit<K> {
    pub key: K,
    pub score: f64,
}

pub fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

/// `dot / (|a| |b|)`; zero when either side has zero norm.
pub fn cosine_with_norms(a: &[f32], a_norm: f64, b: &[f32], b_norm: f64) -> f64 {
    if a_norm == 0.0 || b_norm == 0.0 {
        return 0.0;
    }
    dot(a, b) / (a_norm * b_norm)
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    cosine_with_norms(a, l2_norm(a), b, l2_norm(b))
}

/// Negated euclidean distance, so larger is closer.
pub fn neg_l2(a: &[f32], b: &[f32]) -> f64 {
    -a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Best-first ordering used for every ranked list in the engine.
pub fn rank_order<K: Ord>(a_score: f64, a_key: &K, b_score: f64, b_key: &K) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_key.cmp(b_key))
}

/// Append-only row store; frozen once indexing finishes.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore<K> {
    dim: usize,
    keys: Vec<K>,
    data: Vec<f32>,
    norms: Vec<f64>,
}

impl<K: Ord + Clone> VectorStore<K> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            keys: Vec::new(),
            data: Vec::new(),
            norms: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[K] {
        &self.keys
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Row-major backing buffer.
    pub fn raw(&self) -> &[f32] {
        &self.data
    }

    pub fn push(&mut self, key: K, v: &Vector) -> Result<(), StoreError> {
        if v.dim() != self.dim {
            return Err(StoreError::DimensionMismatch {
                expected: self.dim,
                got: v.dim(),
            });
        }
        self.data.extend_from_slice(v.as_slice());
        self.norms.push(v.norm());
        self.keys.push(key);
        Ok(())
    }

    /// Rebuilds a store from persisted rows.
    pub fn from_parts(dim: usize, keys: Vec<K>, data: Vec<f32>) -> Result<Self, StoreError> {
        if dim == 0 {
            return Err(StoreError::ZeroDim);
        }
        if data.len() != keys.len() * dim {
            return Err(StoreError::DimensionMismatch {
                expected: keys.len() * dim,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(StoreError::NonFinite);
        }
        let norms = data.chunks_exact(dim).map(l2_norm).collect();
        Ok(Self {
            dim,
            keys,
            data,
            norms,
        })
    }

    /// Exact brute-force top-`k` search. Returns `min(k, len)` hits.
    pub fn search(&self, query: &Vector, k: usize, metric: Metric) -> Result<Vec<Hit<K>>, StoreError> {
        if k == 0 {
            return Err(StoreError::ZeroK);
        }
        if query.dim() != self.dim {
            return Err(StoreError::DimensionMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        if self.is_empty() {
            return Err(StoreError::EmptyStore);
        }
        let q = query.as_slice();
        let scores: Vec<f64> = match metric {
            Metric::Cosine => {
                let q_norm = query.norm();
                if q_norm == 0.0 {
                    return Err(StoreError::ZeroQuery);
                }
                (0..self.len())
                    .map(|i| cosine_with_norms(q, q_norm, self.row(i), self.norms[i]))
                    .collect()
            }
            Metric::L2 => (0..self.len()).map(|i| neg_l2(q, self.row(i))).collect(),
        };

        let mut order: Vec<usize> = (0..self.len()).collect();
        let cmp = |a: &usize, b: &usize| rank_order(scores[*a], &self.keys[*a], scores[*b], &self.keys[*b]);
        if k < order.len() {
            order.select_nth_unstable_by(k - 1, cmp);
            order.truncate(k);
        }
        order.sort_unstable_by(cmp);
        Ok(order
            .into_iter()
            .map(|i| Hit {
                key: self.keys[i].clone(),
                score: scores[i],
            })
            .collect())
    }
}
