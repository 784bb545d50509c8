//! Question sets: the native JSONL format and LongBench-style records.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mscale_core::index::ChunkRef;
use mscale_core::{Corpus, CorpusError, Document};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Malformed { path: PathBuf, line: usize, reason: String },
    #[error("dataset {0} contains no questions")]
    Empty(PathBuf),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QARecord {
    pub query: String,
    pub gold_answers: Vec<String>,
    /// Documents bundled with this question, when the source has them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_doc_ids: Option<Vec<String>>,
}

impl QARecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.query.trim().is_empty() {
            return Err("empty query".into());
        }
        if self.gold_answers.is_empty() {
            return Err("gold_answers must not be empty".into());
        }
        Ok(())
    }
}

/// One line of a dataset file: a question plus optional gold chunk
/// annotations used for the gold-chunk recall column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetItem {
    #[serde(flatten)]
    pub record: QARecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_chunks: Option<Vec<ChunkRef>>,
}

fn read(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetItem>, DatasetError> {
    let raw = read(path)?;
    let mut items = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| DatasetError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let item: DatasetItem = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        item.record.validate().map_err(bad)?;
        items.push(item);
    }
    if items.is_empty() {
        return Err(DatasetError::Empty(path.to_path_buf()));
    }
    Ok(items)
}

pub fn write_dataset(path: &Path, items: &[DatasetItem]) -> Result<(), DatasetError> {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it).expect("dataset items serialize"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Deserialize)]
struct LongBenchRecord {
    input: String,
    context: String,
    answers: Vec<String>,
    #[serde(default, rename = "_id")]
    id: Option<String>,
}

fn passage_header(line: &str) -> bool {
    line.trim()
        .strip_prefix("Passage ")
        .and_then(|r| r.strip_suffix(':'))
        .is_some_and(|n| !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()))
}

/// Splits a bundled context on `Passage N:` header lines. A context without
/// headers is a single passage.
pub fn split_passages(context: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut cur: Option<Vec<&str>> = None;
    let mut preamble: Vec<&str> = Vec::new();
    for line in context.lines() {
        if passage_header(line) {
            if let Some(p) = cur.take() {
                out.push(p.join("\n"));
            }
            cur = Some(Vec::new());
        } else if let Some(p) = cur.as_mut() {
            p.push(line);
        } else {
            preamble.push(line);
        }
    }
    if let Some(p) = cur {
        out.push(p.join("\n"));
    }
    if out.is_empty() {
        out.push(preamble.join("\n"));
    }
    out.into_iter()
        .map(|p| p.trim().to_string())
        .filter(|p| !p.is_empty())
        .collect()
}

/// Reads LongBench-style records (`input`, `context`, `answers`) and returns
/// a corpus of per-question passages plus the questions, each pointing at
/// its own passages through `context_doc_ids`.
pub fn load_longbench(path: &Path) -> Result<(Corpus, Vec<QARecord>), DatasetError> {
    let raw = read(path)?;
    let mut docs = Vec::new();
    let mut records = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| DatasetError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let rec: LongBenchRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let qid = rec.id.unwrap_or_else(|| format!("q{}", records.len()));
        let mut ids = Vec::new();
        for (j, text) in split_passages(&rec.context).into_iter().enumerate() {
            let id = format!("{qid}-p{j}");
            ids.push(id.clone());
            docs.push(Document::new(id, text));
        }
        let record = QARecord {
            query: rec.input,
            gold_answers: rec.answers,
            context_doc_ids: Some(ids),
        };
        record.validate().map_err(bad)?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(DatasetError::Empty(path.to_path_buf()));
    }
    Ok((Corpus::new(docs)?, records))
}
