#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use serde_json::Value;
use tower::ServiceExt;

use statechat_core::lm::{LmBackend, ScriptedBackend};
use statechat_core::scenario::ScenarioFiles;
use statechat_core::transcript::to_jsonl;
use statechat_core::{Registry, Utterance};
use statechat_service::{router, AppState, InstanceStore, MemoryStore, SqliteStore};

pub fn scenario_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

pub fn scenario(name: &str) -> ScenarioFiles {
    ScenarioFiles::load(scenario_dir(name)).unwrap()
}

pub fn golden(name: &str) -> String {
    std::fs::read_to_string(scenario_dir(name).join("transcript.golden.jsonl")).unwrap()
}

pub fn app(store: Arc<dyn InstanceStore>, backend: Arc<dyn LmBackend>) -> Router {
    router(Arc::new(AppState::new(
        store,
        backend,
        Arc::new(Registry::with_builtins()),
    )))
}

pub fn memory_app(backend: Arc<dyn LmBackend>) -> Router {
    app(Arc::new(MemoryStore::new()), backend)
}

/// A fresh service process over an existing database file.
pub fn sqlite_app(path: &Path, backend: Arc<dyn LmBackend>) -> Router {
    app(Arc::new(SqliteStore::open(path).unwrap()), backend)
}

pub fn scripted(files: &ScenarioFiles) -> Arc<ScriptedBackend> {
    Arc::new(ScriptedBackend::new(files.script.clone()))
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    call_raw(app, method, uri, body.map(|b| b.to_string())).await
}

pub async fn call_raw(
    app: &Router,
    method: Method,
    uri: &str,
    body: Option<String>,
) -> (StatusCode, Value) {
    let request = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = axum::body::to_bytes(response.into_body(), usize::MAX)
        .await
        .unwrap();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

pub async fn create(app: &Router, spec_text: &str) -> String {
    let (status, body) = call_raw(app, Method::POST, "/create", Some(spec_text.to_owned())).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["uuid"].as_str().unwrap().to_owned()
}

pub async fn respond(app: &Router, uuid: &str, content: &str) -> (StatusCode, Value) {
    call(
        app,
        Method::POST,
        &format!("/{uuid}/respond"),
        Some(serde_json::json!({ "content": content })),
    )
    .await
}

/// `/conversation` rendered in the golden-file line format.
pub async fn transcript(app: &Router, uuid: &str) -> String {
    let (status, body) = call(app, Method::GET, &format!("/{uuid}/conversation"), None).await;
    assert_eq!(status, StatusCode::OK);
    let utterances: Vec<Utterance> = serde_json::from_value(body).unwrap();
    to_jsonl(&utterances)
}

/// Opens the conversation with an empty message, then sends every input.
pub async fn replay(app: &Router, uuid: &str, inputs: &[String]) {
    let (status, body) = respond(app, uuid, "").await;
    assert_eq!(status, StatusCode::OK, "{body}");
    for input in inputs {
        let (status, body) = respond(app, uuid, input).await;
        assert_eq!(status, StatusCode::OK, "{body}");
    }
}
