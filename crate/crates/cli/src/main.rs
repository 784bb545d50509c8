//! `mscale`: build hierarchical indexes, query them, run benchmarks and
//! generate synthetic corpora.
//!
//! Exit codes: 0 ok, 1 partial failure, 2 usage or input error, 3 state
//! error (existing output, incompatible or corrupt index), 4 service error.

mod config;
mod grid;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use mscale_core::generation::{generate, GenerationError, GenerationMode, GenerationOutcome};
use mscale_core::{
    build_index, load_corpus, load_index, save_index, write_corpus, BuildMode, CorpusFormat,
    DocAggregation, HierIndex, IndexError, Metric, RetrievalError, Retriever, Services,
};
use mscale_eval::{gen_synthetic_corpus, load_dataset, run_benchmark, write_dataset, SynthSpec};

use config::{Backend, RunConfig};

/// Error carrying the process exit code it maps to.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

const PARTIAL: u8 = 1;
const USAGE: u8 = 2;
const STATE: u8 = 3;
const SERVICE: u8 = 4;

trait Code<T> {
    fn code(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Code<T> for Result<T, E> {
    fn code(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, err: e.into() })
    }
}

fn index_code(e: &IndexError) -> u8 {
    match e {
        IndexError::Config(_) => USAGE,
        IndexError::Summarize { .. } | IndexError::Embed { .. } | IndexError::EmbedCount { .. } => SERVICE,
        IndexError::DocumentsFailed(_) | IndexError::NothingIndexed => SERVICE,
        _ => STATE,
    }
}

fn retrieval_code(e: &RetrievalError) -> u8 {
    match e {
        RetrievalError::Config(_) | RetrievalError::EmptyQuery => USAGE,
        RetrievalError::Embed(_) | RetrievalError::Rerank(_) | RetrievalError::RerankCount { .. } => SERVICE,
        _ => STATE,
    }
}

fn generation_code(e: &GenerationError) -> u8 {
    match e {
        GenerationError::Chat { .. } => SERVICE,
        _ => STATE,
    }
}

#[derive(Parser)]
#[command(name = "mscale", version, about = "Multi-scale hierarchical retrieval for long-context QA")]
struct Cli {
    /// More log output on stderr (repeatable). MSCALE_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and persist an index from a corpus.
    Index(IndexArgs),
    /// Retrieve (and optionally answer) a single query.
    Query(QueryArgs),
    /// Run a benchmark grid over a question set.
    Bench(BenchArgs),
    /// Write a synthetic multi-hop corpus and question set.
    Synth(SynthArgs),
}

#[derive(Args)]
struct BackendArgs {
    /// Offline deterministic services.
    #[arg(long, conflicts_with = "live")]
    mock: bool,
    /// Remote services from the config file.
    #[arg(long)]
    live: bool,
}

impl BackendArgs {
    fn resolve(&self, cfg: &RunConfig) -> Backend {
        if self.mock {
            Backend::Mock
        } else if self.live {
            Backend::Live
        } else {
            cfg.services.backend
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum InputFormat {
    Jsonl,
    Dir,
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Corpus layout; defaults to `dir` for directories, `jsonl` otherwise.
    #[arg(long, value_enum)]
    format: Option<InputFormat>,
    /// Replace an existing index directory.
    #[arg(long)]
    force: bool,
    /// Skip documents that fail instead of aborting.
    #[arg(long)]
    lenient: bool,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum QueryMode {
    None,
    Generate(GenerationMode),
}

fn parse_mode(s: &str) -> Result<QueryMode, String> {
    if s == "none" {
        return Ok(QueryMode::None);
    }
    s.parse().map(QueryMode::Generate)
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long, short)]
    query: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k1: Option<usize>,
    #[arg(long)]
    k2: Option<usize>,
    #[arg(long)]
    alpha: Option<usize>,
    #[arg(long)]
    hop: Option<usize>,
    /// none, rb, rl, full_ext, fil, full_ef, rb_ext or rb_ef.
    #[arg(long, default_value = "rb", value_parser = parse_mode)]
    mode: QueryMode,
    #[arg(long, value_enum)]
    agg: Option<AggArg>,
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    #[arg(long)]
    no_scale_up: bool,
    #[arg(long)]
    no_propagation: bool,
    /// Include per-step intermediates in the output.
    #[arg(long)]
    trace: bool,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggArg {
    Max,
    Mean,
    Sum,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Cosine,
    L2,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    index: PathBuf,
    /// Question set in the native JSONL format.
    #[arg(long)]
    dataset: PathBuf,
    /// Grid file (TOML); without one, the base config runs in every mode.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    docs: usize,
    /// Tokens per document.
    #[arg(long, default_value_t = 320)]
    doc_length: usize,
    #[arg(long, default_value_t = 2)]
    hop: usize,
    #[arg(long, default_value_t = 0.3)]
    distractor_rate: f64,
    #[arg(long, default_value_t = 4)]
    questions: usize,
    #[arg(long, default_value_t = 0.0)]
    cross_rate: f64,
    #[arg(long)]
    force: bool,
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("output serializes"));
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    RunConfig::load(path).code(USAGE)
}

fn build_services(cfg: &RunConfig, backend: Backend) -> Result<Services, Failure> {
    match backend {
        Backend::Mock => Ok(Services::mock(cfg.services.mock_dim)),
        Backend::Live => cfg.services.live().code(USAGE),
    }
}

/// Services able to query `index`. Mock services take their dimension from
/// the index's embedder id.
fn query_services(cfg: &RunConfig, backend: Backend, index: &HierIndex) -> Result<Services, Failure> {
    let svc = match backend {
        Backend::Mock => {
            let dim = index
                .embedder_id()
                .strip_prefix("mock-hash-")
                .and_then(|d| d.parse().ok())
                .ok_or_else(|| Failure {
                    code: STATE,
                    err: anyhow!(
                        "index was built with embedder {:?}; query it with --live",
                        index.embedder_id()
                    ),
                })?;
            Services::mock(dim)
        }
        Backend::Live => cfg.services.live().code(USAGE)?,
    };
    let id = svc.embedder.id();
    if id != index.embedder_id() {
        return Err(Failure {
            code: STATE,
            err: anyhow!("query embedder {id:?} does not match index embedder {:?}", index.embedder_id()),
        });
    }
    Ok(svc)
}

fn open_index(dir: &Path) -> Result<HierIndex, Failure> {
    load_index(dir).map_err(|e| Failure {
        code: STATE,
        err: anyhow::Error::new(e).context(format!("loading index {}", dir.display())),
    })
}

fn cmd_index(a: &IndexArgs) -> Result<u8, Failure> {
    let cfg = load_config(a.config.as_deref())?;
    let format = match a.format {
        Some(InputFormat::Dir) => CorpusFormat::TextDir,
        Some(InputFormat::Jsonl) => CorpusFormat::Jsonl,
        None if a.corpus.is_dir() => CorpusFormat::TextDir,
        None => CorpusFormat::Jsonl,
    };
    let corpus = load_corpus(&a.corpus, format)
        .with_context(|| format!("loading corpus {}", a.corpus.display()))
        .code(USAGE)?;
    if a.out.exists() {
        if !a.force {
            return Err(Failure {
                code: STATE,
                err: anyhow!("{} already exists; pass --force to replace it", a.out.display()),
            });
        }
        std::fs::remove_dir_all(&a.out)
            .with_context(|| format!("removing {}", a.out.display()))
            .code(STATE)?;
    }
    let svc = build_services(&cfg, a.backend.resolve(&cfg))?;
    let mode = if a.lenient { BuildMode::Lenient } else { BuildMode::Strict };
    let started = Instant::now();
    let index = build_index(&corpus, &cfg.index, &(&svc).into(), mode).map_err(|e| Failure {
        code: index_code(&e),
        err: e.into(),
    })?;
    save_index(&index, &a.out).map_err(|e| Failure {
        code: index_code(&e),
        err: e.into(),
    })?;
    for s in index.skipped() {
        tracing::warn!(doc = %s.doc_id, "skipped: {}", s.reason);
    }
    print_json(&json!({
        "out": a.out,
        "embedder": index.embedder_id(),
        "documents": index.docs().len(),
        "chunks": index.chunks().len(),
        "slices": index.slices().len(),
        "skipped": index.skipped().len(),
        "elapsed_secs": started.elapsed().as_secs_f64(),
    }));
    Ok(if index.skipped().is_empty() { 0 } else { PARTIAL })
}

#[derive(Serialize)]
struct QueryOutput<'a> {
    query: &'a str,
    mode: String,
    answer: Option<&'a str>,
    merged: &'a [mscale_core::retriever::MergedChunk],
    #[serde(skip_serializing_if = "Option::is_none")]
    generation: Option<&'a GenerationOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<&'a mscale_core::retriever::RetrievalTrace>,
}

fn cmd_query(a: &QueryArgs) -> Result<u8, Failure> {
    let mut cfg = load_config(a.config.as_deref())?;
    let r = &mut cfg.retrieval;
    if let Some(v) = a.k1 {
        r.k1 = v;
    }
    if let Some(v) = a.k2 {
        r.k2 = v;
    }
    if let Some(v) = a.alpha {
        r.alpha = v;
    }
    if let Some(v) = a.hop {
        r.hop = v;
    }
    if let Some(v) = a.agg {
        r.doc_agg = match v {
            AggArg::Max => DocAggregation::Max,
            AggArg::Mean => DocAggregation::Mean,
            AggArg::Sum => DocAggregation::Sum,
        };
    }
    if let Some(v) = a.metric {
        r.metric = match v {
            MetricArg::Cosine => Metric::Cosine,
            MetricArg::L2 => Metric::L2,
        };
    }
    r.enable_scale_up &= !a.no_scale_up;
    r.enable_propagation_merge &= !a.no_propagation;
    r.validate().code(USAGE)?;

    let backend = a.backend.resolve(&cfg);
    let index = open_index(&a.index)?;
    let svc = query_services(&cfg, backend, &index)?;
    if backend == Backend::Live {
        if let Some(m) = cfg.services.chat_model() {
            cfg.generation.model = m.to_string();
        }
    }
    let result = Retriever::new(&index, svc.embedder.as_ref(), svc.reranker.as_ref())
        .retrieve(&a.query, &cfg.retrieval)
        .map_err(|e| Failure {
            code: retrieval_code(&e),
            err: e.into(),
        })?;
    let outcome = match a.mode {
        QueryMode::None => None,
        QueryMode::Generate(m) => Some(
            generate(&a.query, &result, &index, m, svc.chat.as_ref(), &cfg.generation).map_err(|e| Failure {
                code: generation_code(&e),
                err: e.into(),
            })?,
        ),
    };
    print_json(&QueryOutput {
        query: &a.query,
        mode: match a.mode {
            QueryMode::None => "none".into(),
            QueryMode::Generate(m) => m.to_string(),
        },
        answer: outcome.as_ref().map(|o| o.answer.as_str()),
        merged: &result.merged,
        generation: outcome.as_ref(),
        trace: a.trace.then_some(&result.trace),
    });
    Ok(0)
}

fn cmd_bench(a: &BenchArgs) -> Result<u8, Failure> {
    let mut cfg = load_config(a.config.as_deref())?;
    let grid = grid::Grid::load(a.grid.as_deref(), &cfg.retrieval).code(USAGE)?;
    let configs = grid.configs();
    for c in &configs {
        c.retrieval
            .validate()
            .with_context(|| format!("grid row {}", c.name))
            .code(USAGE)?;
    }
    let items = load_dataset(&a.dataset).code(USAGE)?;
    let backend = a.backend.resolve(&cfg);
    let index = open_index(&a.index)?;
    let svc = query_services(&cfg, backend, &index)?;
    if backend == Backend::Live {
        if let Some(m) = cfg.services.chat_model() {
            cfg.generation.model = m.to_string();
        }
    }
    let started = Instant::now();
    let report = run_benchmark(&items, &index, &configs, &grid.modes, &svc, &cfg.generation);
    report.write_to_dir(&a.out).code(STATE)?;
    eprint!("{}", report.to_text());
    print_json(&json!({
        "out": a.out,
        "configs": configs.len(),
        "modes": grid.modes.len(),
        "records": report.records.len(),
        "completed": report.completed(),
        "failed": report.failed(),
        "elapsed_secs": started.elapsed().as_secs_f64(),
    }));
    Ok(if report.completed() == 0 { PARTIAL } else { 0 })
}

fn cmd_synth(a: &SynthArgs) -> Result<u8, Failure> {
    let spec = SynthSpec {
        seed: a.seed,
        n_docs: a.docs,
        doc_length: a.doc_length,
        hop_distance: a.hop,
        distractor_rate: a.distractor_rate,
        n_questions: a.questions,
        cross_document_rate: a.cross_rate,
    };
    let synth = gen_synthetic_corpus(&spec).code(USAGE)?;
    let corpus_path = a.out.join("corpus.jsonl");
    if corpus_path.exists() && !a.force {
        return Err(Failure {
            code: STATE,
            err: anyhow!("{} already exists; pass --force to replace it", corpus_path.display()),
        });
    }
    std::fs::create_dir_all(&a.out)
        .with_context(|| format!("creating {}", a.out.display()))
        .code(STATE)?;
    write_corpus(&corpus_path, &synth.corpus).code(STATE)?;
    let dataset_path = a.out.join("dataset.jsonl");
    write_dataset(&dataset_path, &synth.items()).code(STATE)?;
    let run = RunConfig {
        index: SynthSpec::index_config(),
        retrieval: SynthSpec::retrieval_config(),
        ..RunConfig::default()
    };
    let config_path = a.out.join("mscale.toml");
    let text = toml::to_string(&run).context("serializing config").code(STATE)?;
    std::fs::write(&config_path, text)
        .with_context(|| format!("writing {}", config_path.display()))
        .code(STATE)?;
    print_json(&json!({
        "corpus": corpus_path,
        "dataset": dataset_path,
        "config": config_path,
        "documents": synth.corpus.len(),
        "questions": synth.records.len(),
    }));
    Ok(0)
}

fn init_logging(verbose: u8) {
    use tracing_subscriber::EnvFilter;
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_env("MSCALE_LOG").unwrap_or_else(|_| EnvFilter::new(default));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let res = match &cli.cmd {
        Command::Index(a) => cmd_index(a),
        Command::Query(a) => cmd_query(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            let mut msg = String::new();
            for cause in f.err.chain() {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&c);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(f.code)
        }
    }
}
