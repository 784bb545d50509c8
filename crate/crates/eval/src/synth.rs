//! Seeded synthetic multi-hop corpora with planted evidence.
//!
//! Every sentence is exactly eight whitespace tokens and chunks are six
//! sentences with a two-sentence overlap, so sentence positions map to chunk
//! indices exactly. A bridge question plants its first fact in the overlap
//! of chunks `a` and `a + 1` and its second fact in the region only chunk
//! `a + hop_distance` covers. Target documents hold nothing but filler and
//! their own evidence; distractors sharing the query's surface words live in
//! the other documents.
//!
//! Under the lexical reranker the score bands are: first-fact chunks 0.0,
//! distractor chunks -0.25, second-fact chunk -0.375, filler -0.5.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use mscale_core::index::{ChunkRef, SizeUnit};
use mscale_core::{Corpus, Document, IndexConfig, RetrievalConfig};

use crate::dataset::{DatasetItem, QARecord};

pub const SENTENCE_TOKENS: usize = 8;
pub const CHUNK_SENTENCES: usize = 6;
pub const OVERLAP_SENTENCES: usize = 2;
const STRIDE: usize = CHUNK_SENTENCES - OVERLAP_SENTENCES;

const KINDS: &[&str] = &["tower", "bridge", "castle"];

const FILLER: &[&str] = &[
    "river", "stone", "quietly", "moved", "across", "green", "valley", "morning", "light", "fell", "over", "old",
    "roofs", "while", "farmers", "carried", "baskets", "toward", "market", "square", "rain", "returned", "after",
    "long", "summer", "children", "played", "near", "water", "mill", "wheel", "turned", "slowly", "under", "grey",
    "clouds", "merchants", "traded", "wool", "salt", "spices", "along", "narrow", "roads", "bells", "rang", "twice",
    "every", "evening", "bread", "smelled", "warm", "inside", "bakery", "windows", "glowed", "amber", "lanterns",
    "swayed", "gentle", "wind", "sheep", "grazed", "hills", "beyond", "orchards", "apples", "ripened", "early",
    "autumn", "travellers", "rested", "beside", "fountain", "songs", "echoed", "through", "quiet", "lanes", "boats",
    "drifted", "harbor", "fishermen", "mended", "nets", "patiently", "snow", "covered", "fields", "winter", "owls",
    "called", "from", "forest", "edges", "candles", "flickered", "small", "chapel", "painters", "sketched", "distant",
    "peaks", "scholars", "argued", "about", "maps", "letters", "arrived", "weekly", "coach", "horses", "waited",
    "patient", "stables", "gardens", "bloomed", "with", "roses", "lilies", "herbs", "clocks", "ticked", "hall",
];

/// Minimum sentence distance between two distractors, so that no slice
/// holds more than one.
const DISTRACTOR_GAP: usize = 3;

const SYLLABLES: &[&str] = &[
    "ka", "lo", "ve", "ri", "mo", "an", "dus", "tel", "ra", "vin", "sor", "me", "pa", "zel", "qui", "dor", "ny", "bex",
    "ul", "fa", "gor", "is", "wen", "tu",
];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SynthError {
    #[error("doc_length {got} tokens is too small; at least {min} are needed to host the planted evidence")]
    DocTooShort { got: usize, min: usize },
    #[error("hop_distance {hop} does not fit in {chunks} chunks per document")]
    HopTooLarge { hop: usize, chunks: usize },
    #[error("{needed} target documents are needed but n_docs is {n_docs}")]
    TooFewDocs { needed: usize, n_docs: usize },
    #[error("{0} must be within [0, 1]")]
    Rate(&'static str),
    #[error("n_questions must be at least 1")]
    NoQuestions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_docs: usize,
    /// Tokens per document, rounded down to whole sentences.
    pub doc_length: usize,
    /// Chunk-index gap between the two evidence chunks of a bridge question.
    pub hop_distance: usize,
    /// Chance that a filler sentence in a non-target document is replaced
    /// by a distractor. Distractors are kept at least three sentences apart.
    pub distractor_rate: f64,
    pub n_questions: usize,
    /// Share of questions whose two facts sit in different documents.
    pub cross_document_rate: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_docs: 20,
            doc_length: 320,
            hop_distance: 2,
            distractor_rate: 0.3,
            n_questions: 4,
            cross_document_rate: 0.0,
        }
    }
}

fn chunk_count(n_sent: usize) -> usize {
    if n_sent <= CHUNK_SENTENCES {
        1
    } else {
        (n_sent - CHUNK_SENTENCES).div_ceil(STRIDE) + 1
    }
}

impl SynthSpec {
    /// The chunking the planted layout is built around.
    pub fn index_config() -> IndexConfig {
        IndexConfig {
            chunk_size: CHUNK_SENTENCES * SENTENCE_TOKENS,
            chunk_overlap: OVERLAP_SENTENCES * SENTENCE_TOKENS,
            chunk_unit: SizeUnit::Tokens,
            slice_size: 120,
            slice_overlap: 60,
            ..IndexConfig::default()
        }
    }

    /// A retrieval budget under which only the first-fact chunks clear the
    /// distractor band.
    pub fn retrieval_config() -> RetrievalConfig {
        RetrievalConfig {
            k1: 100,
            k2: 2,
            alpha: 2,
            hop: 1,
            ..RetrievalConfig::default()
        }
    }

    fn sentences(&self) -> usize {
        self.doc_length / SENTENCE_TOKENS
    }

    pub fn chunks_per_doc(&self) -> usize {
        chunk_count(self.sentences())
    }

    fn cross_questions(&self) -> usize {
        (self.n_questions as f64 * self.cross_document_rate).round() as usize
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(0.0..=1.0).contains(&self.distractor_rate) {
            return Err(SynthError::Rate("distractor_rate"));
        }
        if !(0.0..=1.0).contains(&self.cross_document_rate) {
            return Err(SynthError::Rate("cross_document_rate"));
        }
        if self.n_questions == 0 {
            return Err(SynthError::NoQuestions);
        }
        let min_sent = CHUNK_SENTENCES + STRIDE;
        if self.sentences() < min_sent {
            return Err(SynthError::DocTooShort {
                got: self.doc_length,
                min: min_sent * SENTENCE_TOKENS,
            });
        }
        let chunks = self.chunks_per_doc();
        let h = self.hop_distance;
        if h.max(1) > chunks - 1 || STRIDE * h + 2 >= self.sentences() {
            return Err(SynthError::HopTooLarge { hop: h, chunks });
        }
        let cross = self.cross_questions();
        let needed = (self.n_questions - cross) + 2 * cross;
        if needed > self.n_docs {
            return Err(SynthError::TooFewDocs {
                needed,
                n_docs: self.n_docs,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    pub records: Vec<QARecord>,
    /// Gold evidence chunks per record, sorted.
    pub gold: Vec<Vec<ChunkRef>>,
}

impl SynthCorpus {
    pub fn items(&self) -> Vec<DatasetItem> {
        self.records
            .iter()
            .zip(&self.gold)
            .map(|(r, g)| DatasetItem {
                record: r.clone(),
                gold_chunks: Some(g.clone()),
            })
            .collect()
    }
}

struct Names {
    used: HashSet<String>,
}

impl Names {
    fn draw(rng: &mut ChaCha8Rng) -> (String, String) {
        let n = rng.random_range(2..=3);
        let mut s = String::new();
        for _ in 0..n {
            s.push_str(SYLLABLES.choose(rng).expect("non-empty"));
        }
        let mut cs = s.chars();
        let name: String = cs.next().map(|c| c.to_ascii_uppercase()).into_iter().chain(cs).collect();
        let lower = name.to_lowercase();
        (name, lower)
    }

    fn allowed(lower: &str) -> bool {
        !FILLER.contains(&lower) && !KINDS.contains(&lower)
    }

    /// A name never handed out before.
    fn fresh(&mut self, rng: &mut ChaCha8Rng) -> String {
        loop {
            let (name, lower) = Self::draw(rng);
            if Self::allowed(&lower) && self.used.insert(lower) {
                return name;
            }
        }
    }

    /// A name that avoids every `fresh` name; may repeat.
    fn other(&self, rng: &mut ChaCha8Rng) -> String {
        loop {
            let (name, lower) = Self::draw(rng);
            if Self::allowed(&lower) && !self.used.contains(&lower) {
                return name;
            }
        }
    }
}

fn filler_sentence(rng: &mut ChaCha8Rng) -> String {
    let mut words: Vec<&str> = (0..SENTENCE_TOKENS).map(|_| *FILLER.choose(rng).expect("non-empty")).collect();
    let last = format!("{}.", words[SENTENCE_TOKENS - 1]);
    words.pop();
    let mut s = words.join(" ");
    s.push(' ');
    s.push_str(&last);
    s
}

fn year(rng: &mut ChaCha8Rng) -> u32 {
    rng.random_range(1700..2000)
}

/// Builds the corpus, questions and gold annotations. Same spec, same bytes.
pub fn gen_synthetic_corpus(spec: &SynthSpec) -> Result<SynthCorpus, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut names = Names { used: HashSet::new() };
    let n_sent = spec.sentences();
    let chunks = spec.chunks_per_doc();
    let width = spec.n_docs.saturating_sub(1).to_string().len().max(3);
    let ids: Vec<String> = (0..spec.n_docs).map(|i| format!("doc{i:0width$}")).collect();

    let mut docs: Vec<Vec<String>> = (0..spec.n_docs)
        .map(|_| (0..n_sent).map(|_| filler_sentence(&mut rng)).collect())
        .collect();

    let mut order: Vec<usize> = (0..spec.n_docs).collect();
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut targets = order.into_iter();
    let mut is_target = vec![false; spec.n_docs];

    let cross = spec.cross_questions();
    let mut records = Vec::with_capacity(spec.n_questions);
    let mut gold = Vec::with_capacity(spec.n_questions);
    let h = spec.hop_distance;

    for q in 0..spec.n_questions {
        let kind = *KINDS.choose(&mut rng).expect("non-empty");
        if q < spec.n_questions - cross {
            let d = targets.next().expect("validated target count");
            is_target[d] = true;
            let max_a = (chunks - 1 - h.max(1)).min((n_sent - 3) / STRIDE - h);
            let a = rng.random_range(0..=max_a);
            let b = a + h;
            let (e1a, e1b, e2) = (names.fresh(&mut rng), names.fresh(&mut rng), names.fresh(&mut rng));
            let (ans_a, ans_b) = (names.fresh(&mut rng), names.fresh(&mut rng));
            docs[d][STRIDE * (a + 1)] = format!("The {kind} {e1a} {e1b} was built by {e2}.");
            docs[d][STRIDE * b + 2] = format!("{e2} was founded in {} by {ans_a} {ans_b}.", year(&mut rng));
            records.push(QARecord {
                query: format!("Who founded the builder of the {kind} {e1a} {e1b}?"),
                gold_answers: vec![format!("{ans_a} {ans_b}")],
                context_doc_ids: None,
            });
            let mut g = vec![ChunkRef::new(ids[d].clone(), a), ChunkRef::new(ids[d].clone(), b)];
            g.sort();
            g.dedup();
            gold.push(g);
        } else {
            let x = targets.next().expect("validated target count");
            let y = targets.next().expect("validated target count");
            is_target[x] = true;
            is_target[y] = true;
            let e = (names.fresh(&mut rng), names.fresh(&mut rng));
            let f = (names.fresh(&mut rng), names.fresh(&mut rng));
            let ye = year(&mut rng);
            let mut yf = year(&mut rng);
            while yf == ye {
                yf = year(&mut rng);
            }
            let max_c = (chunks - 1).min((n_sent - 3) / STRIDE);
            let cx = rng.random_range(0..=max_c);
            let cy = rng.random_range(0..=max_c);
            docs[x][STRIDE * cx + 2] = format!("The {kind} {} {} was built in {ye}.", e.0, e.1);
            docs[y][STRIDE * cy + 2] = format!("The {kind} {} {} was built in {yf}.", f.0, f.1);
            let earlier = if ye < yf { &e } else { &f };
            records.push(QARecord {
                query: format!("Which was built earlier: {} {} or {} {}?", e.0, e.1, f.0, f.1),
                gold_answers: vec![format!("{} {}", earlier.0, earlier.1)],
                context_doc_ids: None,
            });
            let mut g = vec![ChunkRef::new(ids[x].clone(), cx), ChunkRef::new(ids[y].clone(), cy)];
            g.sort();
            gold.push(g);
        }
    }

    for (d, sentences) in docs.iter_mut().enumerate() {
        if is_target[d] {
            continue;
        }
        let mut last: Option<usize> = None;
        for (i, s) in sentences.iter_mut().enumerate() {
            let spaced = last.is_none_or(|l| i - l >= DISTRACTOR_GAP);
            if rng.random::<f64>() < spec.distractor_rate && spaced {
                last = Some(i);
                let kind = *KINDS.choose(&mut rng).expect("non-empty");
                let (x1, x2, x3) = (names.other(&mut rng), names.other(&mut rng), names.other(&mut rng));
                *s = format!("The {kind} {x1} {x2} was built by {x3}.");
            }
        }
    }

    let documents = docs
        .into_iter()
        .zip(&ids)
        .map(|(s, id)| Document::new(id.clone(), s.join(" ")))
        .collect();
    Ok(SynthCorpus {
        corpus: Corpus::new(documents).expect("generated ids are unique"),
        records,
        gold,
    })
}
