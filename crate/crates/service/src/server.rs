//! HTTP routes.
//!
//! One store per process behind a reader-writer lock: read-only tools share
//! the read side and run concurrently, storage takes the write side, so
//! writes are serialized. When a store path is configured every storage call
//! is persisted before the response is sent.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use kgr_core::metrics::{GraphDiagnostics, SpectralParams};
use kgr_core::store::{load_jsonl, save_jsonl, StoreError};
use kgr_core::tools::{dispatch_with, StoreAccess, ToolEnv, ToolError, ToolName};
use kgr_core::KnowledgeGraph;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::ServiceConfig;

pub const REQUEST_ID_HEADER: &str = "x-request-id";

/// A tool call addressed by name in the body rather than the path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolEnvelope {
    pub tool: String,
    pub payload: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
}

pub struct AppState {
    store: RwLock<KnowledgeGraph>,
    store_path: Option<PathBuf>,
    spectral: SpectralParams,
    /// Fixed clock for reproducible responses; live clock when `None`.
    clock: Option<ToolEnv>,
}

impl AppState {
    pub fn new(store: KnowledgeGraph, store_path: Option<PathBuf>, spectral: SpectralParams) -> Self {
        Self {
            store: RwLock::new(store),
            store_path,
            spectral,
            clock: None,
        }
    }

    /// Open the configured store; a missing file starts empty.
    pub fn from_config(cfg: &ServiceConfig) -> Result<Self, StoreError> {
        let kg = match &cfg.store_path {
            Some(p) => load_jsonl(p)?,
            None => KnowledgeGraph::new(),
        };
        Ok(Self::new(kg, cfg.store_path.clone(), cfg.spectral))
    }

    pub fn with_fixed_clock(mut self) -> Self {
        self.clock = Some(ToolEnv::fixed());
        self
    }

    fn env(&self) -> ToolEnv {
        match &self.clock {
            Some(env) => env.clone(),
            None => {
                let label = self
                    .store_path
                    .as_deref()
                    .map_or_else(|| "memory".to_string(), |p| p.display().to_string());
                ToolEnv::live(label)
            }
        }
    }

    pub fn snapshot(&self) -> KnowledgeGraph {
        self.store.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn persist(&self, kg: &KnowledgeGraph) -> Result<(), ToolError> {
        match &self.store_path {
            Some(p) => save(kg, p),
            None => Ok(()),
        }
    }
}

fn save(kg: &KnowledgeGraph, path: &Path) -> Result<(), ToolError> {
    save_jsonl(kg, path).map_err(|e| ToolError::Storage(format!("cannot persist to {}: {e}", path.display())))
}

pub fn status_of(e: &ToolError) -> StatusCode {
    match e {
        ToolError::UnknownTool(_) => StatusCode::NOT_FOUND,
        ToolError::Storage(_) => StatusCode::SERVICE_UNAVAILABLE,
        ToolError::ResponseSchema { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

/// Run one tool call against the shared store.
///
/// Returns the status and body that go on the wire: the tool's report
/// verbatim on success, `{"error": {...}}` otherwise.
pub fn handle_tool_request(state: &AppState, tool: &str, payload: &Value) -> (StatusCode, Value) {
    match run_tool(state, tool, payload) {
        Ok(report) => (StatusCode::OK, report),
        Err(e) => {
            if !e.is_client_error() {
                tracing::error!(tool, error = %e, "tool call failed");
            }
            (status_of(&e), e.to_body())
        }
    }
}

fn run_tool(state: &AppState, tool: &str, payload: &Value) -> Result<Value, ToolError> {
    let name: ToolName = tool.parse()?;
    let env = state.env();
    if name == ToolName::KgStorage {
        let mut kg = state.store.write().unwrap_or_else(|e| e.into_inner());
        let report = dispatch_with(name, payload, StoreAccess::Exclusive(&mut kg), &env)?;
        state.persist(&kg)?;
        Ok(report)
    } else {
        let kg = state.store.read().unwrap_or_else(|e| e.into_inner());
        dispatch_with(name, payload, StoreAccess::Shared(&kg), &env)
    }
}

fn malformed(e: serde_json::Error) -> ToolError {
    ToolError::InvalidRequest {
        path: "/".into(),
        message: format!("body is not valid JSON: {e}"),
    }
}

fn respond(status: StatusCode, body: Value, request_id: Option<String>) -> Response {
    let mut resp = (status, Json(body)).into_response();
    if let Some(v) = request_id.and_then(|id| HeaderValue::from_str(&id).ok()) {
        resp.headers_mut().insert(REQUEST_ID_HEADER, v);
    }
    resp
}

async fn tool_by_path(
    State(state): State<Arc<AppState>>,
    UrlPath(name): UrlPath<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let request_id = headers
        .get(REQUEST_ID_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    let (status, out) = match serde_json::from_slice::<Value>(&body) {
        Ok(payload) => handle_tool_request(&state, &name, &payload),
        Err(e) => {
            let e = malformed(e);
            (status_of(&e), e.to_body())
        }
    };
    respond(status, out, request_id)
}

async fn tool_by_envelope(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    match serde_json::from_slice::<ToolEnvelope>(&body) {
        Ok(env) => {
            let (status, out) = handle_tool_request(&state, &env.tool, &env.payload);
            respond(status, out, env.request_id)
        }
        Err(e) => {
            let e = malformed(e);
            respond(status_of(&e), e.to_body(), None)
        }
    }
}

async fn list_tools() -> Json<Value> {
    let names: Vec<&str> = ToolName::ALL.iter().map(|t| t.as_str()).collect();
    Json(json!({ "tools": names }))
}

async fn tool_schema(UrlPath(name): UrlPath<String>) -> Response {
    match name.parse::<ToolName>() {
        Ok(t) => {
            let parse = |s: &str| serde_json::from_str::<Value>(s).expect("bundled schema is valid JSON");
            let body = json!({
                "tool": t.as_str(),
                "request": parse(t.request_schema()),
                "response": parse(t.response_schema()),
            });
            (StatusCode::OK, Json(body)).into_response()
        }
        Err(e) => (status_of(&e), Json(e.to_body())).into_response(),
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    let kg = state.store.read().unwrap_or_else(|e| e.into_inner());
    Json(json!({
        "status": "ok",
        "entities": kg.entities.len(),
        "relations": kg.relations.len(),
        "staged": kg.staged.len(),
    }))
}

async fn metrics(State(state): State<Arc<AppState>>) -> Json<GraphDiagnostics> {
    let kg = state.store.read().unwrap_or_else(|e| e.into_inner());
    Json(GraphDiagnostics::of(&kg, &state.spectral))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/metrics", get(metrics))
        .route("/tools", get(list_tools).post(tool_by_envelope))
        .route("/tools/{name}", post(tool_by_path))
        .route("/tools/{name}/schema", get(tool_schema))
        .with_state(state)
}

/// Serve until ctrl-c.
pub async fn serve(cfg: &ServiceConfig) -> anyhow::Result<()> {
    let state = Arc::new(AppState::from_config(cfg)?);
    let listener = tokio::net::TcpListener::bind(cfg.bind).await?;
    let addr: SocketAddr = listener.local_addr()?;
    tracing::info!(%addr, store = ?cfg.store_path, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
