use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;

use mscale_core::services::http::{HttpChat, HttpEmbedder, HttpReranker};
use mscale_core::services::{
    ChatMessage, ChatModel, ChatRequest, ChatResponse, EmbedRequest, EmbedResponse, Embedder, RerankRequest,
    RerankResponse, Reranker, ServiceConfig, ServiceError,
};

#[derive(Default)]
struct Counters {
    flaky: AtomicUsize,
    down: AtomicUsize,
    bad: AtomicUsize,
    embed_batches: AtomicUsize,
}

type Shared = Arc<Counters>;

async fn flaky_embed(State(c): State<Shared>, Json(req): Json<EmbedRequest>) -> Result<Json<EmbedResponse>, StatusCode> {
    if c.flaky.fetch_add(1, Ordering::SeqCst) < 2 {
        return Err(StatusCode::SERVICE_UNAVAILABLE);
    }
    Ok(Json(EmbedResponse {
        embeddings: req.texts.iter().map(|t| vec![t.len() as f32, 1.0, 0.0]).collect(),
    }))
}

async fn batched_embed(State(c): State<Shared>, Json(req): Json<EmbedRequest>) -> Json<EmbedResponse> {
    c.embed_batches.fetch_add(1, Ordering::SeqCst);
    Json(EmbedResponse {
        embeddings: req.texts.iter().map(|t| vec![t.len() as f32, 1.0, 0.0]).collect(),
    })
}

async fn down(State(c): State<Shared>) -> StatusCode {
    c.down.fetch_add(1, Ordering::SeqCst);
    StatusCode::INTERNAL_SERVER_ERROR
}

async fn bad_request(State(c): State<Shared>) -> StatusCode {
    c.bad.fetch_add(1, Ordering::SeqCst);
    StatusCode::BAD_REQUEST
}

async fn rerank(Json(req): Json<RerankRequest>) -> Json<RerankResponse> {
    Json(RerankResponse {
        scores: req.passages.iter().map(|p| if p.contains(&req.query) { 3.0 } else { -2.0 }).collect(),
    })
}

async fn chat(headers: HeaderMap, Json(req): Json<ChatRequest>) -> Result<Json<ChatResponse>, StatusCode> {
    let auth = headers.get("authorization").and_then(|v| v.to_str().ok());
    if auth != Some("Bearer sekrit") {
        return Err(StatusCode::UNAUTHORIZED);
    }
    Ok(Json(ChatResponse {
        text: format!("{} says {}", req.model, req.messages[0].content),
    }))
}

async fn garbage() -> &'static str {
    "not json"
}

/// Starts the mock server on its own runtime thread and returns its base URL.
fn serve() -> (String, Shared) {
    let counters = Shared::default();
    let app = Router::new()
        .route("/flaky", post(flaky_embed))
        .route("/embed", post(batched_embed))
        .route("/down", post(down))
        .route("/bad", post(bad_request))
        .route("/rerank", post(rerank))
        .route("/chat", post(chat))
        .route("/garbage", post(garbage))
        .with_state(counters.clone());
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    (format!("http://{}", rx.recv().unwrap()), counters)
}

fn cfg(base: &str, path: &str) -> ServiceConfig {
    ServiceConfig {
        endpoint: format!("{base}{path}"),
        model: "test-model".into(),
        timeout_secs: 5.0,
        max_retries: 3,
        backoff_base_secs: 0.001,
        ..ServiceConfig::default()
    }
}

#[test]
fn transient_failures_are_retried() {
    let (base, c) = serve();
    let emb = HttpEmbedder::new(cfg(&base, "/flaky"), 3).unwrap();
    let v = emb.embed(&["abcd".to_string()]).unwrap();
    assert_eq!(v[0].as_slice(), &[4.0, 1.0, 0.0]);
    assert_eq!(c.flaky.load(Ordering::SeqCst), 3);
}

#[test]
fn server_errors_exhaust_retries() {
    let (base, c) = serve();
    let emb = HttpEmbedder::new(cfg(&base, "/down"), 3).unwrap();
    match emb.embed(&["x".to_string()]) {
        Err(ServiceError::Exhausted { attempts, last }) => {
            assert_eq!(attempts, 4);
            assert!(last.contains("500"), "{last}");
        }
        other => panic!("expected exhaustion, got {other:?}"),
    }
    assert_eq!(c.down.load(Ordering::SeqCst), 4);
}

#[test]
fn client_errors_are_not_retried() {
    let (base, c) = serve();
    let rr = HttpReranker::new(cfg(&base, "/bad")).unwrap();
    assert!(matches!(rr.score("q", &["p"]), Err(ServiceError::Rejected(_))));
    assert_eq!(c.bad.load(Ordering::SeqCst), 1);

    let rr = HttpReranker::new(cfg(&base, "/garbage")).unwrap();
    assert!(matches!(rr.score("q", &["p"]), Err(ServiceError::Rejected(_))));
}

#[test]
fn embed_requests_are_batched() {
    let (base, c) = serve();
    let emb = HttpEmbedder::new(
        ServiceConfig {
            batch_size: 2,
            ..cfg(&base, "/embed")
        },
        3,
    )
    .unwrap();
    let texts: Vec<String> = (0..5).map(|i| "x".repeat(i + 1)).collect();
    let out = emb.embed(&texts).unwrap();
    assert_eq!(out.len(), 5);
    assert_eq!(out[4].as_slice()[0], 5.0);
    assert_eq!(c.embed_batches.load(Ordering::SeqCst), 3);
    assert_eq!(emb.id(), "test-model@3");
}

#[test]
fn dimension_mismatch_is_invalid_response() {
    let (base, _) = serve();
    let emb = HttpEmbedder::new(cfg(&base, "/embed"), 8).unwrap();
    assert!(matches!(emb.embed(&["a".to_string()]), Err(ServiceError::InvalidResponse(_))));
}

#[test]
fn reranker_scores_keep_passage_order() {
    let (base, _) = serve();
    let rr = HttpReranker::new(cfg(&base, "/rerank")).unwrap();
    assert_eq!(rr.score("fox", &["red dog", "the fox"]).unwrap(), vec![-2.0, 3.0]);
}

#[test]
fn chat_sends_bearer_token_from_env() {
    let (base, _) = serve();
    std::env::set_var("MSCALE_TEST_CHAT_KEY", "sekrit");
    let chat = HttpChat::new(ServiceConfig {
        api_key_env: Some("MSCALE_TEST_CHAT_KEY".into()),
        ..cfg(&base, "/chat")
    })
    .unwrap();
    let req = ChatRequest {
        model: "m1".into(),
        messages: vec![ChatMessage::user("hi")],
        temperature: 0.0,
        max_tokens: 16,
    };
    assert_eq!(chat.complete(&req).unwrap(), "m1 says hi");

    let no_key = HttpChat::new(ServiceConfig {
        api_key_env: Some("MSCALE_TEST_UNSET_KEY".into()),
        ..cfg(&base, "/chat")
    })
    .unwrap();
    assert!(matches!(no_key.complete(&req), Err(ServiceError::Config(_))));

    let anonymous = HttpChat::new(cfg(&base, "/chat")).unwrap();
    assert!(matches!(anonymous.complete(&req), Err(ServiceError::Rejected(_))));
}

#[test]
fn invalid_config_is_rejected() {
    assert!(HttpChat::new(ServiceConfig {
        timeout_secs: 0.0,
        ..cfg("http://127.0.0.1:1", "/chat")
    })
    .is_err());
}

fn round_trip<T: Serialize + DeserializeOwned + PartialEq + std::fmt::Debug>(name: &str) {
    let path = format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    let raw = std::fs::read_to_string(path).unwrap();
    let parsed: T = serde_json::from_str(&raw).unwrap();
    let again: T = serde_json::from_str(&serde_json::to_string(&parsed).unwrap()).unwrap();
    assert_eq!(parsed, again);
    let as_value: serde_json::Value = serde_json::from_str(&raw).unwrap();
    assert_eq!(serde_json::to_value(&parsed).unwrap(), as_value, "{name}");
}

#[test]
fn wire_shapes_match_recorded_fixtures() {
    round_trip::<EmbedRequest>("embed_request.json");
    round_trip::<EmbedResponse>("embed_response.json");
    round_trip::<RerankRequest>("rerank_request.json");
    round_trip::<RerankResponse>("rerank_response.json");
    round_trip::<ChatRequest>("chat_request.json");
    round_trip::<ChatResponse>("chat_response.json");
}
