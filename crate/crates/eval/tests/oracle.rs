use mscale_core::{build_index, BuildMode, Corpus, Document, IndexConfig, RetrievalConfig, Retriever, Services};
use mscale_eval::{oracle_retrieve, OracleError};

#[test]
fn single_chunk_corpus_gives_one_merged_chunk() {
    let corpus = Corpus::new(vec![Document::new("only", "a short note about owls")]).unwrap();
    let svc = Services::mock(64);
    let res = oracle_retrieve("owls", &corpus, &IndexConfig::default(), &RetrievalConfig::default(), &svc).unwrap();
    assert_eq!(res.merged.len(), 1);
    assert_eq!(res.merged[0].doc_id, "only");
    assert_eq!(res.merged[0].render(), "a short note about owls");
}

#[test]
fn planted_fixture_matches_the_engine() {
    let words = |p: &str| (0..40).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
    let mut d2 = words("w");
    d2[12] = "blue".into();
    d2[13] = "fox".into();
    d2[14] = "jumped".into();
    let corpus = Corpus::new(vec![
        Document::new("d1", words("x").join(" ")),
        Document::new("d2", d2.join(" ")),
        Document::new("d3", words("y").join(" ")),
    ])
    .unwrap();
    let index_cfg = IndexConfig {
        chunk_size: 10,
        chunk_overlap: 0,
        slice_size: 40,
        slice_overlap: 10,
        ..IndexConfig::default()
    };
    let cfg = RetrievalConfig {
        k1: 10,
        k2: 2,
        alpha: 2,
        hop: 1,
        ..RetrievalConfig::default()
    };
    let svc = Services::mock(64);
    let idx = build_index(&corpus, &index_cfg, &(&svc).into(), BuildMode::Strict).unwrap();
    let engine = Retriever::new(&idx, svc.embedder.as_ref(), svc.reranker.as_ref())
        .retrieve("blue fox jumped", &cfg)
        .unwrap();
    let oracle = oracle_retrieve("blue fox jumped", &corpus, &index_cfg, &cfg, &svc).unwrap();
    assert_eq!(engine, oracle);
    assert_eq!(oracle.merged[0].doc_id, "d2");
    let seg = &oracle.merged[0].segments[0];
    assert_eq!((seg.lo, seg.hi), (0, 2));
}

#[test]
fn oracle_refuses_large_corpora() {
    let docs = (0..51).map(|i| Document::new(format!("d{i}"), "text")).collect();
    let corpus = Corpus::new(docs).unwrap();
    let r = oracle_retrieve("q", &corpus, &IndexConfig::default(), &RetrievalConfig::default(), &Services::mock(16));
    assert!(matches!(r, Err(OracleError::CorpusTooLarge { .. })));
}
