//! On-disk layout:
//!
//! ```text
//! manifest.json            format version, config, counts, file checksums
//! documents.jsonl          indexed documents (needed to merge original spans)
//! chunks.jsonl             {doc_id, chunk_id, start, end, text}
//! summaries.jsonl          {doc_id, chunk_id, text, fallback}
//! slices.jsonl             {doc_id, chunk_id, slice_id, start, end, text}
//! embeddings.f32           row-major little-endian f32, row i = slice i
//! embeddings.meta.json     {dim, rows, checksum}
//! ```
//!
//! Optional `chunk_embeddings.*` / `summary_embeddings.*` follow the same
//! pattern when the config enables them. Writes are deterministic: the same
//! index always produces the same bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    Chunk, ChunkRef, HierIndex, IndexConfig, IndexError, IndexParts, SkipRecord, Slice, SliceRef, Summary,
};
use crate::corpus::Document;
use crate::store::VectorStore;

pub const FORMAT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub documents: usize,
    pub chunks: usize,
    pub slices: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: IndexConfig,
    pub embedder: String,
    pub corpus_fingerprint: String,
    pub counts: Counts,
    pub skipped: Vec<SkipRecord>,
    /// sha256 of every data file, keyed by file name.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EmbeddingMeta {
    dim: usize,
    rows: usize,
    checksum: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IndexError + '_ {
    move |source| IndexError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn jsonl<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).expect("rows serialize");
        out.push(b'\n');
    }
    out
}

fn f32_bytes(data: &[f32]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

struct Writer<'a> {
    dir: &'a Path,
    files: BTreeMap<String, String>,
}

impl Writer<'_> {
    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), IndexError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn put_vectors<K: Ord + Clone>(&mut self, stem: &str, store: &VectorStore<K>) -> Result<(), IndexError> {
        let bytes = f32_bytes(store.raw());
        let meta = EmbeddingMeta {
            dim: store.dim(),
            rows: store.len(),
            checksum: sha256_hex(&bytes),
        };
        self.put(&format!("{stem}.f32"), &bytes)?;
        let meta = serde_json::to_vec_pretty(&meta).expect("meta serializes");
        self.put(&format!("{stem}.meta.json"), &meta)
    }
}

pub fn save_index(index: &HierIndex, dir: &Path) -> Result<(), IndexError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut w = Writer {
        dir,
        files: BTreeMap::new(),
    };
    w.put("documents.jsonl", &jsonl(index.docs()))?;
    w.put("chunks.jsonl", &jsonl(index.chunks()))?;
    w.put("summaries.jsonl", &jsonl(index.summaries()))?;
    w.put("slices.jsonl", &jsonl(index.slices()))?;
    w.put_vectors("embeddings", index.store())?;
    if let Some(s) = index.chunk_store() {
        w.put_vectors("chunk_embeddings", s)?;
    }
    if let Some(s) = index.summary_store() {
        w.put_vectors("summary_embeddings", s)?;
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: index.config().clone(),
        embedder: index.embedder_id().to_string(),
        corpus_fingerprint: index.corpus_fingerprint().to_string(),
        counts: Counts {
            documents: index.docs().len(),
            chunks: index.chunks().len(),
            slices: index.slices().len(),
            skipped: index.skipped().len(),
        },
        skipped: index.skipped().to_vec(),
        files: w.files,
    };
    let path = dir.join(MANIFEST);
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    fs::write(&path, bytes).map_err(io_err(&path))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, IndexError> {
    let path = dir.join(MANIFEST);
    let raw = fs::read(&path).map_err(io_err(&path))?;
    // check the version before the full schema so future layouts fail cleanly
    let probe: serde_json::Value = serde_json::from_slice(&raw).map_err(|e| IndexError::Corrupt {
        file: MANIFEST.into(),
        reason: e.to_string(),
    })?;
    let found = probe
        .get("format_version")
        .and_then(|v| v.as_u64().or_else(|| v.as_str().and_then(|s| s.parse().ok())))
        .ok_or_else(|| IndexError::Corrupt {
            file: MANIFEST.into(),
            reason: "missing format_version".into(),
        })? as u32;
    if found != FORMAT_VERSION {
        return Err(IndexError::Incompatible {
            found,
            supported: FORMAT_VERSION,
        });
    }
    serde_json::from_value(probe).map_err(|e| IndexError::Corrupt {
        file: MANIFEST.into(),
        reason: e.to_string(),
    })
}

struct Reader<'a> {
    dir: &'a Path,
    manifest: &'a Manifest,
}

impl Reader<'_> {
    fn bytes(&self, name: &str) -> Result<Vec<u8>, IndexError> {
        let expected = self.manifest.files.get(name).ok_or_else(|| IndexError::Corrupt {
            file: name.into(),
            reason: "not listed in manifest".into(),
        })?;
        let path = self.dir.join(name);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        if &sha256_hex(&bytes) != expected {
            return Err(IndexError::Corrupt {
                file: name.into(),
                reason: "checksum mismatch".into(),
            });
        }
        Ok(bytes)
    }

    fn rows<T: DeserializeOwned>(&self, name: &str) -> Result<Vec<T>, IndexError> {
        let bytes = self.bytes(name)?;
        let text = std::str::from_utf8(&bytes).map_err(|e| IndexError::Corrupt {
            file: name.into(),
            reason: e.to_string(),
        })?;
        text.lines()
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| IndexError::Corrupt {
                    file: name.into(),
                    reason: format!("line {}: {e}", i + 1),
                })
            })
            .collect()
    }

    fn vectors<K: Ord + Clone>(&self, stem: &str, keys: Vec<K>) -> Result<VectorStore<K>, IndexError> {
        let meta_name = format!("{stem}.meta.json");
        let data_name = format!("{stem}.f32");
        let meta: EmbeddingMeta =
            serde_json::from_slice(&self.bytes(&meta_name)?).map_err(|e| IndexError::Corrupt {
                file: meta_name.clone(),
                reason: e.to_string(),
            })?;
        let path = self.dir.join(&data_name);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let corrupt = |reason: String| IndexError::Corrupt {
            file: data_name.clone(),
            reason,
        };
        if bytes.len() != meta.rows * meta.dim * 4 {
            return Err(corrupt(format!(
                "expected {} bytes for {}x{} floats, found {}",
                meta.rows * meta.dim * 4,
                meta.rows,
                meta.dim,
                bytes.len()
            )));
        }
        if sha256_hex(&bytes) != meta.checksum || self.manifest.files.get(&data_name) != Some(&meta.checksum) {
            return Err(corrupt("checksum mismatch".into()));
        }
        if meta.rows != keys.len() {
            return Err(corrupt(format!("{} rows for {} keys", meta.rows, keys.len())));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        VectorStore::from_parts(meta.dim, keys, data).map_err(|e| corrupt(e.to_string()))
    }
}

/// Loads an index written by [`save_index`], verifying version and every
/// checksum before anything is returned.
pub fn load_index(dir: &Path) -> Result<HierIndex, IndexError> {
    let manifest = read_manifest(dir)?;
    let r = Reader {
        dir,
        manifest: &manifest,
    };
    let docs: Vec<Document> = r.rows("documents.jsonl")?;
    let chunks: Vec<Chunk> = r.rows("chunks.jsonl")?;
    let summaries: Vec<Summary> = r.rows("summaries.jsonl")?;
    let slices: Vec<Slice> = r.rows("slices.jsonl")?;
    let store = r.vectors("embeddings", slices.iter().map(Slice::slice_ref).collect::<Vec<SliceRef>>())?;
    let chunk_keys = || chunks.iter().map(|c| ChunkRef::new(c.doc_id.clone(), c.chunk_id)).collect::<Vec<_>>();
    let chunk_store = manifest
        .config
        .embed_chunks
        .then(|| r.vectors("chunk_embeddings", chunk_keys()))
        .transpose()?;
    let summary_store = manifest
        .config
        .embed_summaries
        .then(|| r.vectors("summary_embeddings", chunk_keys()))
        .transpose()?;
    let counts = &manifest.counts;
    if counts.documents != docs.len() || counts.chunks != chunks.len() || counts.slices != slices.len() {
        return Err(IndexError::Corrupt {
            file: MANIFEST.into(),
            reason: "counts do not match data files".into(),
        });
    }
    HierIndex::from_parts(IndexParts {
        config: manifest.config.clone(),
        embedder_id: manifest.embedder.clone(),
        corpus_fingerprint: manifest.corpus_fingerprint.clone(),
        docs,
        chunks,
        summaries,
        slices,
        store,
        chunk_store,
        summary_store,
        skipped: manifest.skipped.clone(),
    })
}
