//! Persisting an extraction through the store's batched upsert.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::ToolEnv;
use crate::extraction::ExtractionResult;
use crate::store::{ItemKind, KindCounts, KnowledgeGraph, REASON_ORPHAN};

pub const SOURCE_TAG: &str = "query_kg_storage";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageRequest {
    pub extracted_kg: ExtractionResult,
}

/// Phase result: code 0 when the phase ran, -1 when the storage layer was
/// unreachable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseStatus {
    pub code: i32,
    pub message: String,
    pub stored_count: usize,
    pub skipped_count: usize,
    pub failed_count: usize,
}

impl PhaseStatus {
    fn done(kind: &str, c: &KindCounts) -> Self {
        Self {
            code: 0,
            message: format!(
                "{kind}: {} stored, {} skipped, {} failed",
                c.stored, c.skipped, c.failed
            ),
            stored_count: c.stored,
            skipped_count: c.skipped,
            failed_count: c.failed,
        }
    }

    fn unavailable(message: &str, items: usize) -> Self {
        Self {
            code: -1,
            message: message.to_string(),
            stored_count: 0,
            skipped_count: 0,
            failed_count: items,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageStatus {
    pub overall_success: bool,
    pub entities_storage: PhaseStatus,
    pub relations_storage: PhaseStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DuplicatesDetected {
    pub entity_duplicates: usize,
    pub relation_duplicates: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessingTime {
    pub entities_time: f64,
    pub relations_time: f64,
    pub total_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageDetails {
    pub total_entities: usize,
    pub total_relations: usize,
    pub entity_types_processed: Vec<String>,
    pub relation_types_processed: Vec<String>,
    pub duplicates_detected: DuplicatesDetected,
    pub processing_time: ProcessingTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseConfig {
    pub host: String,
    pub database: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceMetrics {
    pub entities_per_second: f64,
    pub relations_per_second: f64,
    pub overall_throughput: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageSummary {
    pub operation_timestamp: String,
    pub database_config: DatabaseConfig,
    pub performance_metrics: PerformanceMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageReport {
    pub storage_status: StorageStatus,
    pub storage_details: StorageDetails,
    pub final_kg: ExtractionResult,
    pub storage_summary: StorageSummary,
    pub warnings: Vec<String>,
    pub recommendations: Vec<String>,
}

fn rate(items: usize, secs: f64) -> f64 {
    if secs > 0.0 {
        items as f64 / secs
    } else {
        0.0
    }
}

fn details(x: &ExtractionResult, dup: DuplicatesDetected, time: ProcessingTime) -> StorageDetails {
    StorageDetails {
        total_entities: x.entity_count(),
        total_relations: x.relation_count(),
        entity_types_processed: x.entities.keys().cloned().collect(),
        relation_types_processed: x.relations.keys().cloned().collect(),
        duplicates_detected: dup,
        processing_time: time,
    }
}

fn summary(env: &ToolEnv, perf: PerformanceMetrics) -> StorageSummary {
    StorageSummary {
        operation_timestamp: env.now.to_rfc3339(),
        database_config: DatabaseConfig {
            host: "local".into(),
            database: env.database.clone(),
        },
        performance_metrics: perf,
    }
}

/// Report for a store that could not be reached: both phases fail with -1
/// and nothing is echoed back.
pub fn storage_unavailable(req: &StorageRequest, env: &ToolEnv, message: &str) -> StorageReport {
    let x = &req.extracted_kg;
    StorageReport {
        storage_status: StorageStatus {
            overall_success: false,
            entities_storage: PhaseStatus::unavailable(message, x.entity_count()),
            relations_storage: PhaseStatus::unavailable(message, x.relation_count()),
        },
        storage_details: details(
            x,
            DuplicatesDetected {
                entity_duplicates: 0,
                relation_duplicates: 0,
            },
            ProcessingTime {
                entities_time: 0.0,
                relations_time: 0.0,
                total_time: 0.0,
            },
        ),
        final_kg: ExtractionResult::default(),
        storage_summary: summary(
            env,
            PerformanceMetrics {
                entities_per_second: 0.0,
                relations_per_second: 0.0,
                overall_throughput: 0.0,
            },
        ),
        warnings: vec![format!("Storage unavailable: {message}")],
        recommendations: vec!["Check the database path and retry".into()],
    }
}

pub fn query_kg_storage(req: &StorageRequest, kg: &mut KnowledgeGraph, env: &ToolEnv) -> StorageReport {
    let x = &req.extracted_kg;
    let started = Instant::now();
    let report = kg.upsert_extraction(x, SOURCE_TAG, env.now);
    let total_time = if env.measure_time {
        started.elapsed().as_secs_f64()
    } else {
        0.0
    };
    // one batched call; attribute the time to phases by item share
    let items = x.item_count().max(1) as f64;
    let time = ProcessingTime {
        entities_time: total_time * x.entity_count() as f64 / items,
        relations_time: total_time * x.relation_count() as f64 / items,
        total_time,
    };

    let failed: BTreeSet<(ItemKind, &str)> = report.failures.iter().map(|f| (f.kind, f.item.as_str())).collect();
    let mut final_kg = x.filter_relations(|t, m| {
        !failed.contains(&(
            ItemKind::Relation,
            format!("{}-[{t}]->{}", m.subject, m.object).as_str(),
        ))
    });
    for (t, names) in final_kg.entities.iter_mut() {
        names.retain(|n| !failed.contains(&(ItemKind::Entity, format!("{t}:{n}").as_str())));
    }
    final_kg.entities.retain(|_, names| !names.is_empty());

    let mut warnings = Vec::new();
    let mut orphans = false;
    for f in &report.failures {
        if f.reason == REASON_ORPHAN {
            orphans = true;
            warnings.push(format!("Missing entity references: {}", f.item));
        } else {
            warnings.push(format!("Rejected {}: {} ({})", kind_name(f.kind), f.item, f.reason));
        }
    }
    let mut recommendations = Vec::new();
    if orphans {
        recommendations.push("Extract the missing endpoint entities and store again".to_string());
    }
    if report.failures.iter().any(|f| f.reason != REASON_ORPHAN) {
        recommendations.push("Align rejected items with the schema".to_string());
    }
    let processed = report.entities.stored + report.relations.stored;
    if processed == 0 && report.entities.skipped + report.relations.skipped > 0 {
        recommendations.push("Everything was already stored; no new knowledge added".to_string());
    }
    if recommendations.is_empty() {
        recommendations.push("Storage completed; continue with the next text".to_string());
    }

    let entities_storage = PhaseStatus::done("entities", &report.entities);
    let relations_storage = PhaseStatus::done("relations", &report.relations);
    let ok = entities_storage.code == 0 && relations_storage.code == 0;
    StorageReport {
        storage_status: StorageStatus {
            overall_success: ok,
            entities_storage,
            relations_storage,
        },
        storage_details: details(
            x,
            DuplicatesDetected {
                entity_duplicates: report.entities.skipped,
                relation_duplicates: report.relations.skipped,
            },
            time,
        ),
        final_kg,
        storage_summary: summary(
            env,
            PerformanceMetrics {
                entities_per_second: rate(x.entity_count(), time.entities_time),
                relations_per_second: rate(x.relation_count(), time.relations_time),
                overall_throughput: rate(x.item_count(), time.total_time),
            },
        ),
        warnings,
        recommendations,
    }
}

fn kind_name(k: ItemKind) -> &'static str {
    match k {
        ItemKind::Entity => "entity",
        ItemKind::Relation => "relation",
    }
}
