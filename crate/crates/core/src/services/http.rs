//! Blocking JSON-over-HTTP clients for remote model services.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{
    call_with_retry, CallFailure, ChatModel, ChatRequest, ChatResponse, EmbedRequest, EmbedResponse,
    Embedder, RerankRequest, RerankResponse, Reranker, ServiceConfig, ServiceError,
};
use crate::store::Vector;

/// Counting semaphore capping concurrent requests per client.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
            while *free == 0 {
                free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
            }
            *free -= 1;
        }
        let out = f();
        *self.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.cv.notify_one();
        out
    }
}

pub struct JsonClient {
    cfg: ServiceConfig,
    http: Client,
    gate: Gate,
}

impl JsonClient {
    pub fn new(cfg: ServiceConfig) -> Result<Self, ServiceError> {
        cfg.validate()?;
        let http = Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| ServiceError::Config(e.to_string()))?;
        let gate = Gate::new(cfg.max_in_flight);
        Ok(Self { cfg, http, gate })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.cfg
    }

    fn bearer(&self) -> Result<Option<String>, ServiceError> {
        match &self.cfg.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| ServiceError::Config(format!("environment variable {var} is not set"))),
        }
    }

    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, body: &Req) -> Result<Resp, ServiceError> {
        let token = self.bearer()?;
        let policy = self.cfg.retry_policy();
        self.gate.run(|| {
            call_with_retry(&policy, || {
                let mut req = self.http.post(&self.cfg.endpoint).json(body);
                if let Some(t) = &token {
                    req = req.bearer_auth(t);
                }
                let resp = req
                    .send()
                    .map_err(|e| CallFailure::Transient(e.to_string()))?;
                let status = resp.status();
                if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
                    return Err(CallFailure::Transient(format!("HTTP {status}")));
                }
                if !status.is_success() {
                    let detail = resp.text().unwrap_or_default();
                    return Err(CallFailure::Permanent(format!("HTTP {status}: {detail}")));
                }
                let bytes = resp
                    .bytes()
                    .map_err(|e| CallFailure::Transient(e.to_string()))?;
                serde_json::from_slice(&bytes)
                    .map_err(|e| CallFailure::Permanent(format!("undecodable response body: {e}")))
            })
        })
    }
}

pub struct HttpEmbedder {
    client: JsonClient,
    dim: usize,
}

impl HttpEmbedder {
    pub fn new(cfg: ServiceConfig, dim: usize) -> Result<Self, ServiceError> {
        Ok(Self {
            client: JsonClient::new(cfg)?,
            dim,
        })
    }
}

impl Embedder for HttpEmbedder {
    fn id(&self) -> String {
        format!("{}@{}", self.client.cfg.model, self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vector>, ServiceError> {
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.client.cfg.batch_size) {
            let resp: EmbedResponse = self.client.post(&EmbedRequest {
                model: self.client.cfg.model.clone(),
                texts: batch.to_vec(),
            })?;
            if resp.embeddings.len() != batch.len() {
                return Err(ServiceError::InvalidResponse(format!(
                    "asked for {} embeddings, got {}",
                    batch.len(),
                    resp.embeddings.len()
                )));
            }
            for v in resp.embeddings {
                if v.len() != self.dim {
                    return Err(ServiceError::InvalidResponse(format!(
                        "expected dimension {}, got {}",
                        self.dim,
                        v.len()
                    )));
                }
                out.push(Vector::new(v).map_err(|e| ServiceError::InvalidResponse(e.to_string()))?);
            }
        }
        Ok(out)
    }
}

pub struct HttpReranker {
    client: JsonClient,
}

impl HttpReranker {
    pub fn new(cfg: ServiceConfig) -> Result<Self, ServiceError> {
        Ok(Self {
            client: JsonClient::new(cfg)?,
        })
    }
}

impl Reranker for HttpReranker {
    fn score(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>, ServiceError> {
        let mut out = Vec::with_capacity(passages.len());
        for batch in passages.chunks(self.client.cfg.batch_size) {
            let resp: RerankResponse = self.client.post(&RerankRequest {
                model: self.client.cfg.model.clone(),
                query: query.to_string(),
                passages: batch.iter().map(|p| p.to_string()).collect(),
            })?;
            if resp.scores.len() != batch.len() {
                return Err(ServiceError::InvalidResponse(format!(
                    "asked for {} scores, got {}",
                    batch.len(),
                    resp.scores.len()
                )));
            }
            if resp.scores.iter().any(|s| !s.is_finite()) {
                return Err(ServiceError::InvalidResponse("non-finite score".into()));
            }
            out.extend(resp.scores);
        }
        Ok(out)
    }
}

pub struct HttpChat {
    client: JsonClient,
}

impl HttpChat {
    pub fn new(cfg: ServiceConfig) -> Result<Self, ServiceError> {
        Ok(Self {
            client: JsonClient::new(cfg)?,
        })
    }

    pub fn model(&self) -> &str {
        &self.client.cfg.model
    }
}

impl ChatModel for HttpChat {
    fn complete(&self, req: &ChatRequest) -> Result<String, ServiceError> {
        let resp: ChatResponse = self.client.post(req)?;
        Ok(resp.text)
    }
}
