//! Documents, corpora and the tokenizer shared by chunking and accounting.
//!
//! All offsets are Unicode scalar-value indices into the document text, never
//! byte offsets.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("duplicate document id \"{0}\"")]
    DuplicateId(String),
    #[error("document \"{0}\" has an empty id or no non-whitespace text")]
    EmptyDocument(String),
    #[error("corpus contains no documents")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            text: text.into(),
            meta: BTreeMap::new(),
        }
    }

    /// Length in characters.
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

/// An ordered, validated collection of documents with unique ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Corpus {
    docs: Vec<Document>,
}

impl Corpus {
    pub fn new(docs: Vec<Document>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(docs.len());
        for doc in &docs {
            if doc.doc_id.is_empty() || doc.text.chars().all(char::is_whitespace) {
                return Err(CorpusError::EmptyDocument(doc.doc_id.clone()));
            }
            if !seen.insert(doc.doc_id.as_str()) {
                return Err(CorpusError::DuplicateId(doc.doc_id.clone()));
            }
        }
        Ok(Self { docs })
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.docs.iter().find(|d| d.doc_id == doc_id)
    }

    pub fn into_docs(self) -> Vec<Document> {
        self.docs
    }
}

impl<'de> Deserialize<'de> for Corpus {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            docs: Vec<Document>,
        }
        let raw = Raw::deserialize(de)?;
        Corpus::new(raw.docs).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    /// One JSON object per line with `id`, `text` and optional `meta`.
    Jsonl,
    /// A directory of text files; ids are file stems.
    TextDir,
}

#[derive(Serialize, Deserialize)]
struct JsonlRecord {
    id: String,
    text: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    meta: BTreeMap<String, String>,
}

/// Writes the corpus in the JSONL format [`load_corpus`] reads.
pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<(), CorpusError> {
    let mut out = String::new();
    for d in corpus.docs() {
        let rec = JsonlRecord {
            id: d.doc_id.clone(),
            text: d.text.clone(),
            meta: d.meta.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("records serialize"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let docs = match format {
        CorpusFormat::Jsonl => {
            let raw = fs::read_to_string(path).map_err(io_err)?;
            let mut docs = Vec::new();
            for (lineno, line) in raw.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let rec: JsonlRecord =
                    serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
                        path: path.to_path_buf(),
                        line: lineno + 1,
                        reason: e.to_string(),
                    })?;
                docs.push(Document {
                    doc_id: rec.id,
                    text: rec.text,
                    meta: rec.meta,
                });
            }
            docs
        }
        CorpusFormat::TextDir => {
            let mut entries: Vec<PathBuf> = fs::read_dir(path)
                .map_err(io_err)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            // read_dir order is platform dependent
            entries.sort();
            let mut docs = Vec::with_capacity(entries.len());
            for file in entries {
                let stem = file
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                let text = fs::read_to_string(&file).map_err(|source| CorpusError::Io {
                    path: file.clone(),
                    source,
                })?;
                docs.push(Document::new(stem, text));
            }
            docs
        }
    };
    if docs.is_empty() {
        return Err(CorpusError::Empty);
    }
    Corpus::new(docs)
}

/// Half-open character range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenMode {
    #[default]
    Whitespace,
    Character,
}

/// Splits `text` into token spans.
///
/// Whitespace mode yields maximal runs of non-whitespace characters; character
/// mode yields one span per character.
pub fn tokenize(text: &str, mode: TokenMode) -> Vec<TokenSpan> {
    match mode {
        TokenMode::Character => (0..text.chars().count())
            .map(|i| TokenSpan::new(i, i + 1))
            .collect(),
        TokenMode::Whitespace => {
            let mut spans = Vec::new();
            let mut run_start: Option<usize> = None;
            let mut pos = 0;
            for ch in text.chars() {
                match (ch.is_whitespace(), run_start) {
                    (false, None) => run_start = Some(pos),
                    (true, Some(s)) => {
                        spans.push(TokenSpan::new(s, pos));
                        run_start = None;
                    }
                    _ => {}
                }
                pos += 1;
            }
            if let Some(s) = run_start {
                spans.push(TokenSpan::new(s, pos));
            }
            spans
        }
    }
}

/// Number of whitespace tokens in `text`.
pub fn count_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Character-indexed view over a string for repeated span extraction.
pub struct CharIndexed<'a> {
    text: &'a str,
    // byte offset of every char plus a trailing text.len()
    offsets: Vec<usize>,
}

impl<'a> CharIndexed<'a> {
    pub fn new(text: &'a str) -> Self {
        let mut offsets: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        offsets.push(text.len());
        Self { text, offsets }
    }

    pub fn char_len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn slice(&self, span: TokenSpan) -> &'a str {
        &self.text[self.offsets[span.start]..self.offsets[span.end]]
    }
}

/// Extracts the characters `[start, end)` of `text`.
pub fn char_slice(text: &str, span: TokenSpan) -> &str {
    let mut iter = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let start = iter.nth(span.start).unwrap_or(text.len());
    let end = if span.end == span.start {
        start
    } else {
        iter.nth(span.end - span.start - 1).unwrap_or(text.len())
    };
    &text[start..end]
}
