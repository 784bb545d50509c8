//! Evaluation toolkit: answer metrics, dataset loaders, a brute-force
//! retrieval oracle, synthetic planted-evidence corpora and the benchmark
//! runner.

pub mod bench;
pub mod dataset;
pub mod metrics;
pub mod oracle;
pub mod synth;

pub use bench::{ablation_grid, alpha_sweep, run_benchmark, BenchReport, EvalRecord, NamedConfig};
pub use dataset::{load_dataset, load_longbench, write_dataset, DatasetItem, QARecord};
pub use metrics::{exact_match, normalize_answer, token_f1, F1Score};
pub use oracle::{oracle_retrieve, OracleError};
pub use synth::{gen_synthetic_corpus, SynthCorpus, SynthError, SynthSpec};
