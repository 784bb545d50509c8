//! Multi-scale retrieval over a document hierarchy: chunks are compressed
//! to summaries, summaries are sliced and embedded, and queries are answered
//! by mapping slice hits back to full chunks and their neighbours.

pub mod corpus;
pub mod generation;
pub mod index;
pub mod retriever;
pub mod services;
pub mod store;

pub use corpus::{load_corpus, write_corpus, Corpus, CorpusError, CorpusFormat, Document};
pub use generation::{generate, GenerationError, GenerationMode, GenerationOptions, GenerationOutcome};
pub use index::{build_index, load_index, save_index, BuildMode, HierIndex, IndexConfig, IndexError, IndexServices};
pub use retriever::{DocAggregation, RetrievalConfig, RetrievalError, RetrievalResult, Retriever};
pub use services::{ChatModel, Embedder, Reranker, ServiceConfig, ServiceError, Services, Summarizer};
pub use store::{Metric, Vector, VectorStore};
