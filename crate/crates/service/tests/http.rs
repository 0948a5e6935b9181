use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use kgr_core::metrics::SpectralParams;
use kgr_core::tools::{validate_error_body, validate_response, ToolName};
use kgr_core::KnowledgeGraph;
use kgr_service::config::ServiceConfig;
use kgr_service::server::{handle_tool_request, router, AppState, REQUEST_ID_HEADER};
use serde_json::{json, Value};
use tower::ServiceExt;

fn example_doc() -> Value {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/example_doc.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn density_payload() -> Value {
    let doc = example_doc();
    json!({
        "text": doc["text"],
        "schema": doc["schema"],
        "extracted_kg": doc["gold"],
    })
}

fn state() -> Arc<AppState> {
    Arc::new(AppState::new(KnowledgeGraph::new(), None, SpectralParams::default()).with_fixed_clock())
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

async fn post(app: &axum::Router, uri: &str, body: &Value) -> (StatusCode, Value) {
    call(app, "POST", uri, Some(&body.to_string())).await
}

#[tokio::test]
async fn unknown_tool_is_not_found() {
    let app = router(state());
    let (status, body) = post(&app, "/tools/query_weather", &json!({})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "unknown_tool");
    assert!(validate_error_body(&body));
}

#[tokio::test]
async fn density_request_returns_a_valid_report() {
    let app = router(state());
    let (status, body) = post(&app, "/tools/query_extraction_density", &density_payload()).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    validate_response(ToolName::ExtractionDensity, &body).unwrap();
    assert!(body.get("error").is_none());
}

#[tokio::test]
async fn missing_schema_names_the_field() {
    let app = router(state());
    let mut payload = density_payload();
    payload.as_object_mut().unwrap().remove("schema");
    let (status, body) = post(&app, "/tools/query_extraction_density", &payload).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "invalid_request");
    assert!(body["error"]["message"].as_str().unwrap().contains("schema"), "{body}");
    assert!(body["error"]["path"].is_string());
    assert!(validate_error_body(&body));
}

#[tokio::test]
async fn malformed_json_is_a_client_error() {
    let app = router(state());
    let (status, body) = call(&app, "POST", "/tools/query_extraction_density", Some("{not json")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "invalid_request");
    assert!(validate_error_body(&body));
}

#[tokio::test]
async fn identical_read_only_requests_agree() {
    let app = router(state());
    let doc = example_doc();
    let cases = [
        ("query_extraction_density", density_payload()),
        (
            "query_quality_metrics",
            json!({"extracted_kg": doc["gold"], "text": doc["text"], "schema": doc["schema"]}),
        ),
        ("query_entity_disambiguation", json!({"extracted_kg": doc["gold"]})),
    ];
    for (tool, payload) in cases {
        let uri = format!("/tools/{tool}");
        let (s1, a) = post(&app, &uri, &payload).await;
        let (s2, b) = post(&app, &uri, &payload).await;
        assert_eq!(s1, s2, "{tool}");
        assert_eq!(a, b, "{tool}");
    }
}

#[tokio::test]
async fn storage_updates_the_shared_store() {
    let st = state();
    let app = router(st.clone());
    let doc = example_doc();
    let (status, body) = post(&app, "/tools/query_kg_storage", &json!({"extracted_kg": doc["gold"]})).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["storage_status"]["overall_success"], true);
    validate_response(ToolName::KgStorage, &body).unwrap();
    assert!(!st.snapshot().entities.is_empty());
    let (_, health) = call(&app, "GET", "/health", None).await;
    assert_eq!(health["status"], "ok");
    assert_eq!(health["entities"], st.snapshot().entities.len());
    let (status, metrics) = call(&app, "GET", "/metrics", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(metrics["entities"], health["entities"]);
}

#[tokio::test]
async fn storage_is_persisted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.jsonl");
    let cfg = ServiceConfig {
        store_path: Some(path.clone()),
        ..ServiceConfig::default()
    };
    let st = Arc::new(AppState::from_config(&cfg).unwrap().with_fixed_clock());
    let (status, _) = handle_tool_request(&st, "query_kg_storage", &json!({"extracted_kg": example_doc()["gold"]}));
    assert_eq!(status, StatusCode::OK);
    let reopened = AppState::from_config(&cfg).unwrap();
    assert_eq!(reopened.snapshot(), st.snapshot());
}

#[tokio::test]
async fn unwritable_store_is_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("missing-dir").join("store.jsonl");
    let st = AppState::new(KnowledgeGraph::new(), Some(path), SpectralParams::default()).with_fixed_clock();
    let (status, body) = handle_tool_request(&st, "query_kg_storage", &json!({"extracted_kg": example_doc()["gold"]}));
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["error"]["code"], "storage_unavailable");
    assert!(validate_error_body(&body));
}

#[tokio::test]
async fn envelope_route_echoes_request_id() {
    let app = router(state());
    let env = json!({"tool": "query_extraction_density", "payload": density_payload(), "request_id": "req-42"});
    let req = Request::builder()
        .method("POST")
        .uri("/tools")
        .body(Body::from(env.to_string()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()[REQUEST_ID_HEADER], "req-42");
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let body: Value = serde_json::from_slice(&bytes).unwrap();
    let (_, direct) = post(&app, "/tools/query_extraction_density", &density_payload()).await;
    assert_eq!(body, direct);
}

#[tokio::test]
async fn tools_and_schemas_are_listed() {
    let app = router(state());
    let (_, list) = call(&app, "GET", "/tools", None).await;
    let names: Vec<&str> = list["tools"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert_eq!(names.len(), 6);
    for name in names {
        let (status, s) = call(&app, "GET", &format!("/tools/{name}/schema"), None).await;
        assert_eq!(status, StatusCode::OK);
        assert!(s["request"].is_object() && s["response"].is_object());
    }
    let (status, _) = call(&app, "GET", "/tools/nope/schema", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}
