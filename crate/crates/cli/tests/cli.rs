use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn mscale(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mscale"))
        .args(args)
        .env_remove("MSCALE_LOG")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&o.stdout)))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthetic corpus, dataset, config and a built index under `dir`.
fn setup(dir: &Path) {
    let synth = dir.join("synth");
    let o = mscale(&["synth", "--out", s(&synth), "--docs", "10", "--questions", "3", "--seed", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = mscale(&[
        "index",
        "--corpus",
        s(&synth.join("corpus.jsonl")),
        "--config",
        s(&synth.join("mscale.toml")),
        "--out",
        s(&dir.join("idx")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

fn first_query(dir: &Path) -> String {
    let line = fs::read_to_string(dir.join("synth/dataset.jsonl")).unwrap();
    let v: Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    v["query"].as_str().unwrap().to_string()
}

#[test]
fn index_happy_path_and_guards() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    fs::write(
        &corpus,
        "{\"id\":\"d1\",\"text\":\"one two three\"}\n{\"id\":\"d2\",\"text\":\"four five\"}\n{\"id\":\"d3\",\"text\":\"six\"}\n",
    )
    .unwrap();
    let out = dir.path().join("idx");
    let o = mscale(&["index", "--corpus", s(&corpus), "--out", s(&out), "--mock"]);
    assert_eq!(code(&o), 0);
    assert_eq!(json(&o)["documents"], 3);
    assert!(out.join("manifest.json").is_file());

    let o = mscale(&["index", "--corpus", s(&corpus), "--out", s(&out)]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--force"));
    let o = mscale(&["index", "--corpus", s(&corpus), "--out", s(&out), "--force"]);
    assert_eq!(code(&o), 0);

    let o = mscale(&["index", "--corpus", s(&dir.path().join("missing.jsonl")), "--out", s(&dir.path().join("x"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    assert!(o.stdout.is_empty());
}

#[test]
fn text_directory_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let docs = dir.path().join("docs");
    fs::create_dir(&docs).unwrap();
    fs::write(docs.join("a.txt"), "alpha text").unwrap();
    fs::write(docs.join("b.txt"), "beta text").unwrap();
    let o = mscale(&["index", "--corpus", s(&docs), "--out", s(&dir.path().join("idx"))]);
    assert_eq!(code(&o), 0);
    assert_eq!(json(&o)["documents"], 2);
}

#[test]
fn query_none_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let q = first_query(dir.path());
    let idx = dir.path().join("idx");
    let cfg = dir.path().join("synth/mscale.toml");
    let args = ["query", "--index", s(&idx), "--config", s(&cfg), "-q", &q, "--mode", "none", "--mock"];
    let (a, b) = (mscale(&args), mscale(&args));
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let v = json(&a);
    assert!(v["answer"].is_null());
    assert!(v.get("trace").is_none());
    assert!(!v["merged"].as_array().unwrap().is_empty());
}

#[test]
fn query_full_ef_logs_three_steps_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let q = first_query(dir.path());
    let o = mscale(&[
        "query",
        "--index",
        s(&dir.path().join("idx")),
        "-q",
        &q,
        "--mode",
        "full_ef",
        "--mock",
        "--trace",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    let steps: Vec<&str> = v["generation"]["step_log"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["step"].as_str().unwrap())
        .collect();
    assert_eq!(steps, ["extract", "filter", "answer"]);
    for key in ["slice_hits", "candidates", "reranked", "scaled", "ranked_docs"] {
        assert!(v["trace"].get(key).is_some(), "trace lacks {key}");
    }
}

#[test]
fn query_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let idx = dir.path().join("idx");
    let o = mscale(&["query", "--index", s(&idx), "-q", "x", "--alpha", "0"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("alpha"));
    let o = mscale(&["query", "--index", s(&idx), "-q", "x", "--mode", "bogus"]);
    assert_eq!(code(&o), 2);
    let o = mscale(&["query", "--index", s(&idx), "-q", "x", "--mock", "--live"]);
    assert_eq!(code(&o), 2);
    let o = mscale(&["query", "--index", s(&dir.path().join("nope")), "-q", "x"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn query_against_a_newer_index_format_is_a_state_error() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let manifest = dir.path().join("idx/manifest.json");
    let raw = fs::read_to_string(&manifest).unwrap().replace("\"format_version\": 1", "\"format_version\": 2");
    fs::write(&manifest, raw).unwrap();
    let o = mscale(&["query", "--index", s(&dir.path().join("idx")), "-q", "x"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("version 2"));
}

#[test]
fn bench_writes_deterministic_reports() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let grid = dir.path().join("grid.toml");
    fs::write(&grid, "version = 1\nmodes = [\"rb\"]\nablation = true\nalpha_sweep = [1, 2, 3, 4]\n").unwrap();
    let run = |out: &str| {
        let out = dir.path().join(out);
        let o = mscale(&[
            "bench",
            "--index",
            s(&dir.path().join("idx")),
            "--dataset",
            s(&dir.path().join("synth/dataset.jsonl")),
            "--config",
            s(&dir.path().join("synth/mscale.toml")),
            "--grid",
            s(&grid),
            "--out",
            s(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(json(&o)["completed"], 8 * 3);
        out
    };
    let (a, b) = (run("b1"), run("b2"));
    for f in ["report.json", "report.txt", "records.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let report: Value = serde_json::from_slice(&fs::read(a.join("report.json")).unwrap()).unwrap();
    let rows: Vec<(String, String)> = report["aggregates"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| (r["group"].as_str().unwrap().into(), r["config"].as_str().unwrap().into()))
        .collect();
    let sweep: Vec<&str> = rows.iter().filter(|r| r.0 == "alpha_sweep").map(|r| r.1.as_str()).collect();
    assert_eq!(sweep, ["alpha_1", "alpha_2", "alpha_3", "alpha_4"]);
    let ablation: Vec<&str> = rows.iter().filter(|r| r.0 == "ablation").map(|r| r.1.as_str()).collect();
    assert_eq!(ablation, ["full", "no_propagation_merge", "no_scale_up"]);
}

#[test]
fn live_backend_without_services_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let o = mscale(&["query", "--index", s(&dir.path().join("idx")), "-q", "x", "--live"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("[services."));
}
