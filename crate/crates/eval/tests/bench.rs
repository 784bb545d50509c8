use mscale_core::generation::{GenerationMode, GenerationOptions};
use mscale_core::{build_index, BuildMode, HierIndex, Services};
use mscale_eval::{ablation_grid, alpha_sweep, gen_synthetic_corpus, run_benchmark, DatasetItem, NamedConfig, SynthSpec};

fn fixture(n_questions: usize) -> (Vec<DatasetItem>, HierIndex, Services) {
    let svc = Services::mock(128);
    let s = gen_synthetic_corpus(&SynthSpec {
        seed: 2,
        n_docs: 24,
        n_questions,
        ..SynthSpec::default()
    })
    .unwrap();
    let idx = build_index(&s.corpus, &SynthSpec::index_config(), &(&svc).into(), BuildMode::Strict).unwrap();
    (s.items(), idx, svc)
}

#[test]
fn ten_questions_one_mode() {
    let (items, idx, svc) = fixture(10);
    let cfgs = [NamedConfig::new("main", "full", SynthSpec::retrieval_config())];
    let r = run_benchmark(&items, &idx, &cfgs, &[GenerationMode::Rb], &svc, &GenerationOptions::default());
    assert_eq!(r.records.len(), 10);
    assert_eq!(r.aggregates.len(), 1);
    assert_eq!(r.completed(), 10);
    let agg = &r.aggregates[0];
    assert_eq!(agg.queries, 10);
    let mean_f1 = r.records.iter().map(|x| x.f1).sum::<f64>() / 10.0;
    assert!((agg.f1 - mean_f1).abs() < 1e-12);
    assert_eq!(agg.gold_chunk_recall, Some(1.0));
}

#[test]
fn ablation_emits_three_rows() {
    let (items, idx, svc) = fixture(4);
    let cfgs = ablation_grid(&SynthSpec::retrieval_config());
    let names: Vec<&str> = cfgs.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, ["full", "no_propagation_merge", "no_scale_up"]);
    let r = run_benchmark(&items, &idx, &cfgs, &[GenerationMode::Rb], &svc, &GenerationOptions::default());
    assert_eq!(r.aggregates.len(), 3);
    let recall = |name: &str| r.aggregates.iter().find(|a| a.config == name).unwrap().gold_chunk_recall.unwrap();
    assert!(recall("no_propagation_merge") < recall("full"));
}

#[test]
fn alpha_sweep_rows() {
    let cfgs = alpha_sweep(&SynthSpec::retrieval_config(), &[1, 2, 3, 4]);
    let names: Vec<&str> = cfgs.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, ["alpha_1", "alpha_2", "alpha_3", "alpha_4"]);
    assert!(cfgs.iter().all(|c| c.group == "alpha_sweep" && c.retrieval.enable_scale_up));
}

#[test]
fn records_come_out_in_config_mode_query_order() {
    let (items, idx, svc) = fixture(5);
    let cfgs = ablation_grid(&SynthSpec::retrieval_config());
    let modes = [GenerationMode::Rb, GenerationMode::Fil];
    let r = run_benchmark(&items, &idx, &cfgs, &modes, &svc, &GenerationOptions::default());
    let mut expected = Vec::new();
    for c in &cfgs {
        for m in modes {
            for q in 0..5 {
                expected.push((c.name.clone(), m, q));
            }
        }
    }
    let got: Vec<_> = r.records.iter().map(|x| (x.config.clone(), x.mode, x.query_id)).collect();
    assert_eq!(got, expected);
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let (items, idx, svc) = fixture(6);
    let cfgs = ablation_grid(&SynthSpec::retrieval_config());
    let run = || {
        let r = run_benchmark(&items, &idx, &cfgs, &GenerationMode::ALL, &svc, &GenerationOptions::default());
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        (r.to_json(), r.to_text(), csv)
    };
    assert_eq!(run(), run());
}

#[test]
fn write_to_dir_produces_all_outputs() {
    let (items, idx, svc) = fixture(3);
    let cfgs = [NamedConfig::new("main", "full", SynthSpec::retrieval_config())];
    let r = run_benchmark(&items, &idx, &cfgs, &[GenerationMode::Rb, GenerationMode::Rl], &svc, &GenerationOptions::default());
    let dir = tempfile::tempdir().unwrap();
    r.write_to_dir(dir.path()).unwrap();
    for f in ["report.json", "report.txt", "records.csv", "timings.json"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let csv = std::fs::read_to_string(dir.path().join("records.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6);
    let text = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(text.contains("full") && text.contains("rl"));
    let back: mscale_eval::BenchReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(back.aggregates, r.aggregates);
}

#[test]
fn failing_queries_are_recorded_and_the_run_continues() {
    let (mut items, idx, svc) = fixture(3);
    items[1].record.query = "   ".into();
    let cfgs = [NamedConfig::new("main", "full", SynthSpec::retrieval_config())];
    let r = run_benchmark(&items, &idx, &cfgs, &[GenerationMode::Rb], &svc, &GenerationOptions::default());
    assert_eq!(r.failed(), 1);
    assert_eq!(r.completed(), 2);
    assert!(r.records[1].error.as_deref().unwrap().starts_with("retrieval"));
    assert_eq!(r.aggregates[0].failed, 1);
}
