//! Contracts for the external model roles (summarizer, embedder, reranker,
//! chat model), their JSON wire shapes, and deterministic mocks.

pub mod http;
pub mod mock;
pub mod retry;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::store::Vector;

pub use retry::{call_with_retry, call_with_retry_using, CallFailure, RetryPolicy};

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ServiceError {
    #[error("service unavailable after {attempts} attempt(s): {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("service misconfigured: {0}")]
    Config(String),
}

pub trait Summarizer: Send + Sync {
    fn summarize(&self, text: &str) -> Result<String, ServiceError>;
}

pub trait Embedder: Send + Sync {
    /// Stable identity recorded in index manifests; queries must use an
    /// embedder with the same id.
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vector>, ServiceError>;

    fn embed_one(&self, text: &str) -> Result<Vector, ServiceError> {
        self.embed(&[text.to_string()])?
            .pop()
            .ok_or_else(|| ServiceError::InvalidResponse("no vector returned".into()))
    }
}

/// Cross-encoder style scorer: higher is more relevant, sign unbounded.
pub trait Reranker: Send + Sync {
    fn score(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>, ServiceError>;
}

pub trait ChatModel: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<String, ServiceError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    #[serde(default)]
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub model: String,
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub embeddings: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankRequest {
    pub model: String,
    pub query: String,
    pub passages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankResponse {
    pub scores: Vec<f64>,
}

/// Connection settings for one remote model role. The credential is never
/// stored here, only the name of the environment variable holding it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key_env: Option<String>,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub backoff_base_secs: f64,
    pub batch_size: usize,
    pub max_in_flight: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: String::new(),
            api_key_env: None,
            timeout_secs: 60.0,
            max_retries: 3,
            backoff_base_secs: 0.5,
            batch_size: 32,
            max_in_flight: 4,
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err(ServiceError::Config("timeout_secs must be > 0".into()));
        }
        if self.backoff_base_secs < 0.0 || !self.backoff_base_secs.is_finite() {
            return Err(ServiceError::Config("backoff_base_secs must be >= 0".into()));
        }
        if self.batch_size == 0 || self.max_in_flight == 0 {
            return Err(ServiceError::Config(
                "batch_size and max_in_flight must be positive".into(),
            ));
        }
        if self.endpoint.is_empty() {
            return Err(ServiceError::Config("endpoint is empty".into()));
        }
        Ok(())
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            backoff_base: Duration::from_secs_f64(self.backoff_base_secs),
        }
    }
}

/// The four model roles bundled for convenience.
#[derive(Clone)]
pub struct Services {
    pub summarizer: Arc<dyn Summarizer>,
    pub embedder: Arc<dyn Embedder>,
    pub reranker: Arc<dyn Reranker>,
    pub chat: Arc<dyn ChatModel>,
}

impl Services {
    /// Fully deterministic offline services.
    pub fn mock(dim: usize) -> Self {
        Self {
            summarizer: Arc::new(mock::HeadSummarizer::default()),
            embedder: Arc::new(mock::HashEmbedder::new(dim)),
            reranker: Arc::new(mock::LexicalReranker),
            chat: Arc::new(mock::EchoChat::default()),
        }
    }
}

/// Summarizer backed by a chat model and a summarization prompt.
pub struct ChatSummarizer {
    chat: Arc<dyn ChatModel>,
    model: String,
    max_tokens: u32,
}

impl ChatSummarizer {
    pub fn new(chat: Arc<dyn ChatModel>, model: impl Into<String>, max_tokens: u32) -> Self {
        Self {
            chat,
            model: model.into(),
            max_tokens,
        }
    }
}

impl Summarizer for ChatSummarizer {
    fn summarize(&self, text: &str) -> Result<String, ServiceError> {
        let prompt = format!(
            "Summarize the passage below. Keep every named entity, date and number.\n\n<passage>\n{text}\n</passage>"
        );
        self.chat.complete(&ChatRequest {
            model: self.model.clone(),
            messages: vec![ChatMessage::user(prompt)],
            temperature: 0.0,
            max_tokens: self.max_tokens,
        })
    }
}
