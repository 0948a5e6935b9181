//! The six extraction-feedback tools and their JSON contracts.
//!
//! [`dispatch`] is the wire entry point: it validates the request body
//! against the tool's request schema, decodes it, runs the tool, and checks
//! the produced report against the response schema before returning it.
//! The schema files under `schemas/` are the published contract.

mod coverage;
mod density;
mod disambiguation;
mod iterative;
mod quality;
mod storage;
mod text;

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use chrono::TimeZone;
use jsonschema::Validator;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::store::{KnowledgeGraph, Timestamp};

pub use coverage::*;
pub use density::*;
pub use disambiguation::*;
pub use iterative::*;
pub use quality::*;
pub use storage::*;
pub use text::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ToolName {
    #[serde(rename = "query_extraction_density")]
    ExtractionDensity,
    #[serde(rename = "query_coverage_feedback")]
    CoverageFeedback,
    #[serde(rename = "query_quality_metrics")]
    QualityMetrics,
    #[serde(rename = "query_iterative_feedback")]
    IterativeFeedback,
    #[serde(rename = "query_entity_disambiguation")]
    EntityDisambiguation,
    #[serde(rename = "query_kg_storage")]
    KgStorage,
}

impl ToolName {
    pub const ALL: [ToolName; 6] = [
        ToolName::ExtractionDensity,
        ToolName::CoverageFeedback,
        ToolName::QualityMetrics,
        ToolName::IterativeFeedback,
        ToolName::EntityDisambiguation,
        ToolName::KgStorage,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ExtractionDensity => "query_extraction_density",
            Self::CoverageFeedback => "query_coverage_feedback",
            Self::QualityMetrics => "query_quality_metrics",
            Self::IterativeFeedback => "query_iterative_feedback",
            Self::EntityDisambiguation => "query_entity_disambiguation",
            Self::KgStorage => "query_kg_storage",
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    pub fn request_schema(self) -> &'static str {
        match self {
            Self::ExtractionDensity => include_str!("../../schemas/query_extraction_density.request.json"),
            Self::CoverageFeedback => include_str!("../../schemas/query_coverage_feedback.request.json"),
            Self::QualityMetrics => include_str!("../../schemas/query_quality_metrics.request.json"),
            Self::IterativeFeedback => include_str!("../../schemas/query_iterative_feedback.request.json"),
            Self::EntityDisambiguation => include_str!("../../schemas/query_entity_disambiguation.request.json"),
            Self::KgStorage => include_str!("../../schemas/query_kg_storage.request.json"),
        }
    }

    pub fn response_schema(self) -> &'static str {
        match self {
            Self::ExtractionDensity => include_str!("../../schemas/query_extraction_density.response.json"),
            Self::CoverageFeedback => include_str!("../../schemas/query_coverage_feedback.response.json"),
            Self::QualityMetrics => include_str!("../../schemas/query_quality_metrics.response.json"),
            Self::IterativeFeedback => include_str!("../../schemas/query_iterative_feedback.response.json"),
            Self::EntityDisambiguation => include_str!("../../schemas/query_entity_disambiguation.response.json"),
            Self::KgStorage => include_str!("../../schemas/query_kg_storage.response.json"),
        }
    }

    /// Whether the tool touches the store.
    pub fn needs_store(self) -> bool {
        matches!(self, Self::EntityDisambiguation | Self::KgStorage)
    }
}

impl fmt::Display for ToolName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ToolName {
    type Err = ToolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| ToolError::UnknownTool(s.to_string()))
    }
}

pub const ERROR_SCHEMA: &str = include_str!("../../schemas/error.response.json");

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("unknown tool: {0}")]
    UnknownTool(String),
    #[error("invalid request at {path}: {message}")]
    InvalidRequest { path: String, message: String },
    #[error("no text")]
    NoText,
    #[error("no schema")]
    NoSchema,
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("storage unavailable: {0}")]
    Storage(String),
    #[error("{tool} produced a report violating its schema at {path}: {message}")]
    ResponseSchema {
        tool: ToolName,
        path: String,
        message: String,
    },
}

impl ToolError {
    /// Stable machine-readable code for the wire error body.
    pub fn code(&self) -> &'static str {
        match self {
            Self::UnknownTool(_) => "unknown_tool",
            Self::InvalidRequest { .. } => "invalid_request",
            Self::NoText => "no_text",
            Self::NoSchema => "no_schema",
            Self::InvalidStrategy(_) => "invalid_strategy",
            Self::InvalidParam(_) => "invalid_param",
            Self::Storage(_) => "storage_unavailable",
            Self::ResponseSchema { .. } => "internal",
        }
    }

    /// JSON pointer of the offending request field, when known.
    pub fn path(&self) -> Option<&str> {
        match self {
            Self::InvalidRequest { path, .. } => Some(path),
            _ => None,
        }
    }

    /// Errors caused by the request rather than the server.
    pub fn is_client_error(&self) -> bool {
        !matches!(self, Self::Storage(_) | Self::ResponseSchema { .. })
    }

    /// `{"error": {"code", "message", "path"?}}`.
    pub fn to_body(&self) -> Value {
        let mut e = serde_json::json!({"code": self.code(), "message": self.to_string()});
        if let Some(p) = self.path() {
            e["path"] = p.into();
        }
        serde_json::json!({ "error": e })
    }
}

/// Ambient inputs of a tool call.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolEnv {
    pub now: Timestamp,
    /// Measure wall-clock processing time (otherwise reported as zero, which
    /// keeps reports reproducible).
    pub measure_time: bool,
    /// Database label echoed in storage reports.
    pub database: String,
}

impl ToolEnv {
    pub fn live(database: impl Into<String>) -> Self {
        Self {
            now: chrono::Utc::now(),
            measure_time: true,
            database: database.into(),
        }
    }

    /// Deterministic environment: fixed clock, no timing, in-memory store.
    pub fn fixed() -> Self {
        Self {
            now: chrono::Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
            measure_time: false,
            database: "memory".into(),
        }
    }
}

struct Validators {
    requests: Vec<Validator>,
    responses: Vec<Validator>,
}

fn compile(src: &str) -> Validator {
    let schema: Value = serde_json::from_str(src).expect("bundled schema is valid JSON");
    jsonschema::validator_for(&schema).expect("bundled schema compiles")
}

fn validators() -> &'static Validators {
    static CELL: OnceLock<Validators> = OnceLock::new();
    CELL.get_or_init(|| Validators {
        requests: ToolName::ALL.iter().map(|t| compile(t.request_schema())).collect(),
        responses: ToolName::ALL.iter().map(|t| compile(t.response_schema())).collect(),
    })
}

fn pointer(p: &str) -> String {
    if p.is_empty() {
        "/".into()
    } else {
        p.into()
    }
}

pub fn validate_request(tool: ToolName, payload: &Value) -> Result<(), ToolError> {
    validators().requests[tool.index()]
        .validate(payload)
        .map_err(|e| ToolError::InvalidRequest {
            path: pointer(e.instance_path().as_str()),
            message: e.to_string(),
        })
}

pub fn validate_response(tool: ToolName, report: &Value) -> Result<(), ToolError> {
    validators().responses[tool.index()]
        .validate(report)
        .map_err(|e| ToolError::ResponseSchema {
            tool,
            path: pointer(e.instance_path().as_str()),
            message: e.to_string(),
        })
}

/// Check a wire error body against the error schema.
pub fn validate_error_body(body: &Value) -> bool {
    static CELL: OnceLock<Validator> = OnceLock::new();
    CELL.get_or_init(|| compile(ERROR_SCHEMA)).is_valid(body)
}

fn decode<T: DeserializeOwned>(payload: &Value) -> Result<T, ToolError> {
    serde_path_to_error::deserialize(payload.clone()).map_err(|e| ToolError::InvalidRequest {
        path: format!("/{}", e.path().to_string().replace('.', "/")),
        message: e.inner().to_string(),
    })
}

fn encode<T: Serialize>(tool: ToolName, report: &T) -> Result<Value, ToolError> {
    let v = serde_json::to_value(report).map_err(|e| ToolError::ResponseSchema {
        tool,
        path: "/".into(),
        message: e.to_string(),
    })?;
    validate_response(tool, &v)?;
    Ok(v)
}

/// How a tool call may reach the store.
#[derive(Debug)]
pub enum StoreAccess<'a> {
    Shared(&'a KnowledgeGraph),
    Exclusive(&'a mut KnowledgeGraph),
    /// No store; the message says why.
    Unavailable(String),
}

impl<'a> From<Result<&'a mut KnowledgeGraph, String>> for StoreAccess<'a> {
    fn from(r: Result<&'a mut KnowledgeGraph, String>) -> Self {
        match r {
            Ok(kg) => Self::Exclusive(kg),
            Err(msg) => Self::Unavailable(msg),
        }
    }
}

/// Validate `payload`, run `tool` and return its response body, itself
/// validated against the response schema.
///
/// A storage call without a store is answered in-band with a failed status
/// rather than an error; disambiguation without a store is an error.
pub fn dispatch(
    tool: ToolName,
    payload: &Value,
    store: Result<&mut KnowledgeGraph, String>,
    env: &ToolEnv,
) -> Result<Value, ToolError> {
    dispatch_with(tool, payload, store.into(), env)
}

/// As [`dispatch`], with read-only store access allowed for tools that do
/// not write. Storage through a shared borrow is a server fault.
pub fn dispatch_with(
    tool: ToolName,
    payload: &Value,
    store: StoreAccess<'_>,
    env: &ToolEnv,
) -> Result<Value, ToolError> {
    validate_request(tool, payload)?;
    match tool {
        ToolName::ExtractionDensity => encode(tool, &query_extraction_density(&decode(payload)?)?),
        ToolName::CoverageFeedback => encode(tool, &query_coverage_feedback(&decode(payload)?)?),
        ToolName::QualityMetrics => encode(tool, &query_quality_metrics(&decode(payload)?)),
        ToolName::IterativeFeedback => encode(tool, &query_iterative_feedback(&decode(payload)?)?),
        ToolName::EntityDisambiguation => {
            let req: DisambiguationRequest = decode(payload)?;
            let kg: &KnowledgeGraph = match store {
                StoreAccess::Shared(kg) => kg,
                StoreAccess::Exclusive(kg) => kg,
                StoreAccess::Unavailable(msg) => return Err(ToolError::Storage(msg)),
            };
            encode(tool, &query_entity_disambiguation(&req, kg)?)
        }
        ToolName::KgStorage => {
            let req: StorageRequest = decode(payload)?;
            let report = match store {
                StoreAccess::Exclusive(kg) => query_kg_storage(&req, kg, env),
                StoreAccess::Unavailable(msg) => storage_unavailable(&req, env, &msg),
                StoreAccess::Shared(_) => return Err(ToolError::Storage("store is open read-only".into())),
            };
            encode(tool, &report)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn names_round_trip() {
        for t in ToolName::ALL {
            assert_eq!(t.as_str().parse::<ToolName>().unwrap(), t);
        }
        assert_eq!("nope".parse::<ToolName>().unwrap_err().code(), "unknown_tool");
    }

    #[test]
    fn schemas_compile() {
        let v = validators();
        assert_eq!(v.requests.len(), 6);
        assert!(validate_error_body(&ToolError::NoText.to_body()));
        let bad = ToolError::InvalidRequest {
            path: "/text".into(),
            message: "x".into(),
        };
        assert!(validate_error_body(&bad.to_body()));
    }

    #[test]
    fn unknown_fields_rejected() {
        let mut kg = KnowledgeGraph::new();
        let body = json!({"extracted_kg": {"entities": {}, "relations": {}}, "bogus": 1});
        let e = dispatch(ToolName::KgStorage, &body, Ok(&mut kg), &ToolEnv::fixed()).unwrap_err();
        assert_eq!(e.code(), "invalid_request");
    }

    #[test]
    fn wrong_type_reports_path() {
        let body = json!({"text": 5, "schema": {"entity_schema": ["A"], "relation_schema": []},
                          "extracted_kg": {"entities": {}, "relations": {}}});
        let e = dispatch(
            ToolName::ExtractionDensity,
            &body,
            Err("unused".into()),
            &ToolEnv::fixed(),
        )
        .unwrap_err();
        assert_eq!(e.path(), Some("/text"));
    }

    #[test]
    fn empty_text_and_schema() {
        let kg = json!({"entities": {}, "relations": {}});
        let s = json!({"entity_schema": ["A"], "relation_schema": []});
        let body = json!({"text": "  ", "schema": s, "extracted_kg": kg});
        let e = dispatch(ToolName::ExtractionDensity, &body, Err("".into()), &ToolEnv::fixed()).unwrap_err();
        assert_eq!(e.to_string(), "no text");
        let body = json!({"text": "a b", "schema": {"entity_schema": [], "relation_schema": []}, "extracted_kg": kg});
        let e = dispatch(ToolName::ExtractionDensity, &body, Err("".into()), &ToolEnv::fixed()).unwrap_err();
        assert_eq!(e.to_string(), "no schema");
    }

    #[test]
    fn storage_without_store_is_in_band() {
        let body = json!({"extracted_kg": {"entities": {"A": ["x"]}, "relations": {}}});
        let v = dispatch(ToolName::KgStorage, &body, Err("offline".into()), &ToolEnv::fixed()).unwrap();
        assert_eq!(v["storage_status"]["entities_storage"]["code"], -1);
        let e = dispatch(
            ToolName::EntityDisambiguation,
            &body,
            Err("offline".into()),
            &ToolEnv::fixed(),
        )
        .unwrap_err();
        assert!(!e.is_client_error());
    }
}
