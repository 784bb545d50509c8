//! The `mscale.toml` run configuration. Every section is optional; missing
//! keys take the library defaults.

use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use mscale_core::generation::GenerationOptions;
use mscale_core::services::http::{HttpChat, HttpEmbedder, HttpReranker};
use mscale_core::services::{ChatModel, ChatSummarizer, ServiceConfig};
use mscale_core::{IndexConfig, RetrievalConfig, Services};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Mock,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub index: IndexConfig,
    pub retrieval: RetrievalConfig,
    pub generation: GenerationOptions,
    pub services: ServicesSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            index: IndexConfig::default(),
            retrieval: RetrievalConfig::default(),
            generation: GenerationOptions::default(),
            services: ServicesSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServicesSection {
    pub backend: Backend,
    /// Dimension of the hashed mock embedder used when building an index.
    pub mock_dim: usize,
    pub embedder: Option<EmbedderSection>,
    pub reranker: Option<ServiceConfig>,
    pub chat: Option<ServiceConfig>,
    /// Chat model used for chunk summaries; defaults to the chat model.
    pub summary_model: Option<String>,
    pub summary_max_tokens: u32,
}

impl Default for ServicesSection {
    fn default() -> Self {
        Self {
            backend: Backend::Mock,
            mock_dim: 256,
            embedder: None,
            reranker: None,
            chat: None,
            summary_model: None,
            summary_max_tokens: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderSection {
    pub dim: usize,
    #[serde(flatten)]
    pub service: ServiceConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let raw = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&raw).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(raw: &str) -> anyhow::Result<Self> {
        let probe: toml::Table = toml::from_str(raw)?;
        match probe.get("version").and_then(toml::Value::as_integer) {
            Some(v) if v == i64::from(CONFIG_VERSION) => {}
            Some(v) => bail!("config version {v} is not supported (expected {CONFIG_VERSION})"),
            None => bail!("config must set `version = {CONFIG_VERSION}`"),
        }
        Ok(toml::from_str(raw)?)
    }
}

fn required<'a, T>(section: &'a Option<T>, name: &str) -> anyhow::Result<&'a T> {
    section
        .as_ref()
        .with_context(|| format!("live backend needs a [services.{name}] section"))
}

impl ServicesSection {
    /// Remote clients for every role. The summarizer is a prompted chat model.
    pub fn live(&self) -> anyhow::Result<Services> {
        let emb = required(&self.embedder, "embedder")?;
        let chat_cfg = required(&self.chat, "chat")?;
        let chat: Arc<dyn ChatModel> = Arc::new(HttpChat::new(chat_cfg.clone())?);
        let summary_model = self.summary_model.clone().unwrap_or_else(|| chat_cfg.model.clone());
        Ok(Services {
            summarizer: Arc::new(ChatSummarizer::new(chat.clone(), summary_model, self.summary_max_tokens)),
            embedder: Arc::new(HttpEmbedder::new(emb.service.clone(), emb.dim)?),
            reranker: Arc::new(HttpReranker::new(required(&self.reranker, "reranker")?.clone())?),
            chat,
        })
    }

    pub fn chat_model(&self) -> Option<&str> {
        self.chat.as_ref().map(|c| c.model.as_str())
    }
}
