#![allow(dead_code)]

use mscale_core::index::SizeUnit;
use mscale_core::{build_index, BuildMode, Corpus, Document, HierIndex, IndexConfig, Services};

pub const DIM: usize = 64;

/// `n` distinct filler words with a per-document prefix so documents share
/// no vocabulary unless a test plants it.
pub fn filler(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}w{i:03}")).collect()
}

pub fn small_config() -> IndexConfig {
    IndexConfig {
        chunk_size: 10,
        chunk_overlap: 0,
        chunk_unit: SizeUnit::Tokens,
        slice_size: 40,
        slice_overlap: 10,
        ..IndexConfig::default()
    }
}

/// Three 40-token documents; d2's second chunk (tokens 10..20) carries
/// the phrase "blue fox jumped".
pub fn planted_corpus() -> Corpus {
    let docs = ["d1", "d2", "d3"]
        .iter()
        .map(|id| {
            let mut words = filler(id, 40);
            if *id == "d2" {
                words[12] = "blue".into();
                words[13] = "fox".into();
                words[14] = "jumped".into();
            }
            Document::new(*id, words.join(" "))
        })
        .collect();
    Corpus::new(docs).unwrap()
}

pub fn build(corpus: &Corpus, cfg: &IndexConfig) -> HierIndex {
    let svc = Services::mock(DIM);
    build_index(corpus, cfg, &(&svc).into(), BuildMode::Strict).unwrap()
}
