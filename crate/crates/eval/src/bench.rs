//! Benchmark runner: per-query evaluation over a grid of retrieval configs
//! and generation modes, with ablation and alpha-sweep helpers.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use mscale_core::generation::{generate, GenerationMode, GenerationOptions};
use mscale_core::index::ChunkRef;
use mscale_core::{HierIndex, RetrievalConfig, RetrievalResult, Retriever, Services};

use crate::dataset::DatasetItem;
use crate::metrics::{exact_match, token_f1};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv export failed: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedConfig {
    /// Which table the row belongs to: `main`, `ablation` or `alpha_sweep`.
    pub group: String,
    pub name: String,
    pub retrieval: RetrievalConfig,
}

impl NamedConfig {
    pub fn new(group: &str, name: &str, retrieval: RetrievalConfig) -> Self {
        Self {
            group: group.into(),
            name: name.into(),
            retrieval,
        }
    }
}

/// Rows `full`, `no_propagation_merge` and `no_scale_up` around `base`.
pub fn ablation_grid(base: &RetrievalConfig) -> Vec<NamedConfig> {
    let full = RetrievalConfig {
        enable_scale_up: true,
        enable_propagation_merge: true,
        ..base.clone()
    };
    vec![
        NamedConfig::new("ablation", "full", full.clone()),
        NamedConfig::new(
            "ablation",
            "no_propagation_merge",
            RetrievalConfig {
                enable_propagation_merge: false,
                ..full.clone()
            },
        ),
        NamedConfig::new(
            "ablation",
            "no_scale_up",
            RetrievalConfig {
                enable_scale_up: false,
                ..full
            },
        ),
    ]
}

/// One row per alpha, named `alpha_<n>`.
pub fn alpha_sweep(base: &RetrievalConfig, alphas: &[usize]) -> Vec<NamedConfig> {
    alphas
        .iter()
        .map(|&a| {
            NamedConfig::new(
                "alpha_sweep",
                &format!("alpha_{a}"),
                RetrievalConfig {
                    alpha: a,
                    enable_scale_up: true,
                    ..base.clone()
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimes {
    pub retrieval_secs: f64,
    pub generation_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub config: String,
    pub mode: GenerationMode,
    pub query_id: usize,
    pub query: String,
    pub prediction: String,
    pub exact_match: u8,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    /// Cumulative prompt characters over all model calls.
    pub context_chars: usize,
    pub context_tokens: usize,
    /// 1.0 when every gold chunk lies inside a returned segment.
    pub gold_chunk_recall: Option<f64>,
    pub error: Option<String>,
    /// Kept out of the report so reports stay byte-deterministic.
    #[serde(skip)]
    pub wall_times: StageTimes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub group: String,
    pub config: String,
    pub mode: GenerationMode,
    pub queries: usize,
    pub failed: usize,
    pub exact_match: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub gold_chunk_recall: Option<f64>,
    pub mean_context_chars: f64,
    pub mean_context_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub configs: Vec<NamedConfig>,
    pub modes: Vec<GenerationMode>,
    pub aggregates: Vec<AggregateRow>,
    pub records: Vec<EvalRecord>,
}

/// Whether every gold chunk falls inside some segment of its document.
pub fn gold_covered(result: &RetrievalResult, gold: &[ChunkRef]) -> bool {
    gold.iter().all(|g| {
        result
            .merged
            .iter()
            .filter(|m| m.doc_id == g.doc_id)
            .flat_map(|m| &m.segments)
            .any(|s| s.lo <= g.chunk_id && g.chunk_id <= s.hi)
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for x in xs {
        sum += x;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn aggregate(group: &str, config: &str, mode: GenerationMode, recs: &[EvalRecord]) -> AggregateRow {
    let ok: Vec<&EvalRecord> = recs.iter().filter(|r| r.error.is_none()).collect();
    let golds: Vec<f64> = ok.iter().filter_map(|r| r.gold_chunk_recall).collect();
    AggregateRow {
        group: group.into(),
        config: config.into(),
        mode,
        queries: recs.len(),
        failed: recs.len() - ok.len(),
        exact_match: mean(ok.iter().map(|r| f64::from(r.exact_match))),
        f1: mean(ok.iter().map(|r| r.f1)),
        precision: mean(ok.iter().map(|r| r.precision)),
        recall: mean(ok.iter().map(|r| r.recall)),
        gold_chunk_recall: (!golds.is_empty()).then(|| mean(golds.into_iter())),
        mean_context_chars: mean(ok.iter().map(|r| r.context_chars as f64)),
        mean_context_tokens: mean(ok.iter().map(|r| r.context_tokens as f64)),
    }
}

/// Runs every (config, mode, question) triple. Queries run in parallel;
/// records and aggregates come out in config, mode, question order.
pub fn run_benchmark(
    items: &[DatasetItem],
    index: &HierIndex,
    configs: &[NamedConfig],
    modes: &[GenerationMode],
    services: &Services,
    gen: &GenerationOptions,
) -> BenchReport {
    let retriever = Retriever::new(index, services.embedder.as_ref(), services.reranker.as_ref());
    let mut records = Vec::new();
    let mut aggregates = Vec::new();
    for cfg in configs {
        let retrieved: Vec<(Result<RetrievalResult, String>, f64)> = items
            .par_iter()
            .map(|it| {
                let t = Instant::now();
                let r = retriever.retrieve(&it.record.query, &cfg.retrieval).map_err(|e| e.to_string());
                (r, t.elapsed().as_secs_f64())
            })
            .collect();
        for &mode in modes {
            let recs: Vec<EvalRecord> = items
                .par_iter()
                .zip(&retrieved)
                .enumerate()
                .map(|(qid, (it, (res, rsecs)))| {
                    let mut rec = EvalRecord {
                        config: cfg.name.clone(),
                        mode,
                        query_id: qid,
                        query: it.record.query.clone(),
                        prediction: String::new(),
                        exact_match: 0,
                        f1: 0.0,
                        precision: 0.0,
                        recall: 0.0,
                        context_chars: 0,
                        context_tokens: 0,
                        gold_chunk_recall: None,
                        error: None,
                        wall_times: StageTimes {
                            retrieval_secs: *rsecs,
                            generation_secs: 0.0,
                        },
                    };
                    let res = match res {
                        Ok(r) => r,
                        Err(e) => {
                            rec.error = Some(format!("retrieval: {e}"));
                            return rec;
                        }
                    };
                    rec.gold_chunk_recall = it
                        .gold_chunks
                        .as_ref()
                        .map(|g| if gold_covered(res, g) { 1.0 } else { 0.0 });
                    let t = Instant::now();
                    let out = generate(&it.record.query, res, index, mode, services.chat.as_ref(), gen);
                    rec.wall_times.generation_secs = t.elapsed().as_secs_f64();
                    match out {
                        Ok(o) => {
                            let f = token_f1(&o.answer, &it.record.gold_answers);
                            rec.exact_match = exact_match(&o.answer, &it.record.gold_answers);
                            rec.f1 = f.f1;
                            rec.precision = f.precision;
                            rec.recall = f.recall;
                            rec.context_chars = o.cumulative_input_chars;
                            rec.context_tokens = o.cumulative_input_tokens;
                            rec.prediction = o.answer;
                        }
                        Err(e) => rec.error = Some(format!("generation: {e}")),
                    }
                    rec
                })
                .collect();
            aggregates.push(aggregate(&cfg.group, &cfg.name, mode, &recs));
            records.extend(recs);
        }
    }
    for r in records.iter().filter(|r| r.error.is_some()) {
        tracing::warn!(config = %r.config, mode = %r.mode, query = r.query_id, error = ?r.error, "query failed");
    }
    BenchReport {
        configs: configs.to_vec(),
        modes: modes.to_vec(),
        aggregates,
        records,
    }
}

#[derive(Serialize)]
struct TimingRow<'a> {
    config: &'a str,
    mode: GenerationMode,
    query_id: usize,
    #[serde(flatten)]
    times: StageTimes,
}

impl BenchReport {
    pub fn completed(&self) -> usize {
        self.records.iter().filter(|r| r.error.is_none()).count()
    }

    pub fn failed(&self) -> usize {
        self.records.len() - self.completed()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Per-stage wall times; not part of the deterministic report.
    pub fn timings_json(&self) -> String {
        let rows: Vec<TimingRow<'_>> = self
            .records
            .iter()
            .map(|r| TimingRow {
                config: &r.config,
                mode: r.mode,
                query_id: r.query_id,
                times: r.wall_times,
            })
            .collect();
        let mut s = serde_json::to_string_pretty(&rows).expect("timings serialize");
        s.push('\n');
        s
    }

    /// Aggregate rows as an aligned text table.
    pub fn to_text(&self) -> String {
        let header = [
            "group", "config", "mode", "n", "failed", "EM", "F1", "P", "R", "gold_recall", "ctx_chars", "ctx_tokens",
        ];
        let rows: Vec<Vec<String>> = self
            .aggregates
            .iter()
            .map(|a| {
                vec![
                    a.group.clone(),
                    a.config.clone(),
                    a.mode.to_string(),
                    a.queries.to_string(),
                    a.failed.to_string(),
                    format!("{:.4}", a.exact_match),
                    format!("{:.4}", a.f1),
                    format!("{:.4}", a.precision),
                    format!("{:.4}", a.recall),
                    a.gold_chunk_recall.map_or("-".into(), |g| format!("{g:.4}")),
                    format!("{:.1}", a.mean_context_chars),
                    format!("{:.1}", a.mean_context_tokens),
                ]
            })
            .collect();
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for r in &rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: Vec<&str>| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = line(header.to_vec());
        out.push('\n');
        for r in &rows {
            out.push_str(&line(r.iter().map(String::as_str).collect()));
            out.push('\n');
        }
        out
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), BenchError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "config",
            "mode",
            "query_id",
            "query",
            "prediction",
            "exact_match",
            "f1",
            "precision",
            "recall",
            "context_chars",
            "context_tokens",
            "gold_chunk_recall",
            "error",
        ])?;
        for r in &self.records {
            wr.write_record([
                r.config.clone(),
                r.mode.to_string(),
                r.query_id.to_string(),
                r.query.clone(),
                r.prediction.clone(),
                r.exact_match.to_string(),
                r.f1.to_string(),
                r.precision.to_string(),
                r.recall.to_string(),
                r.context_chars.to_string(),
                r.context_tokens.to_string(),
                r.gold_chunk_recall.map_or(String::new(), |g| g.to_string()),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        wr.flush().map_err(|e| BenchError::Csv(e.into()))?;
        Ok(())
    }

    /// Writes `report.json`, `report.txt`, `records.csv` and `timings.json`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<(), BenchError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| BenchError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let p = dir.join("report.json");
        fs::write(&p, self.to_json()).map_err(io(&p))?;
        let p = dir.join("report.txt");
        fs::write(&p, self.to_text()).map_err(io(&p))?;
        let p = dir.join("records.csv");
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        fs::write(&p, buf).map_err(io(&p))?;
        let p = dir.join("timings.json");
        fs::write(&p, self.timings_json()).map_err(io(&p))?;
        Ok(())
    }
}
