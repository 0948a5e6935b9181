//! Schema type coverage with the 0.6 / 0.4 entity / relation weighting.

use serde::{Deserialize, Serialize};

use super::ToolError;
use crate::extraction::{ExtractionResult, Schema};

pub const ENTITY_WEIGHT: f64 = 0.6;
pub const RELATION_WEIGHT: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageRequest {
    pub text: String,
    pub schema: Schema,
    pub extracted_kg: ExtractionResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority_types: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaInfo {
    pub entity_types: Vec<String>,
    pub relation_types: Vec<String>,
    pub total_types: usize,
    pub schema_complexity: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindCoverage {
    pub covered_types: Vec<String>,
    pub total_types: usize,
    pub coverage_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeCoverage {
    pub entity_coverage: KindCoverage,
    pub relation_coverage: KindCoverage,
    pub overall_coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingTypes {
    pub missing_entity_types: Vec<String>,
    pub missing_relation_types: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityAnalysis {
    pub has_priority: bool,
    pub priority_types: Vec<String>,
    pub covered_priority: Vec<String>,
    pub missing_priority: Vec<String>,
    pub priority_coverage_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub schema_info: SchemaInfo,
    pub type_coverage: TypeCoverage,
    pub missing_types: MissingTypes,
    pub priority_analysis: PriorityAnalysis,
    pub coverage_score: f64,
    pub recommendations: Vec<String>,
}

/// Qualitative schema size: up to 5 types simple, up to 15 moderate.
pub fn schema_complexity_label(total_types: usize) -> &'static str {
    match total_types {
        0..=5 => "simple",
        6..=15 => "moderate",
        _ => "complex",
    }
}

/// Covered fraction; a kind with no schema types counts as fully covered.
fn kind_coverage(types: &[String], covered: impl Fn(&str) -> bool) -> (KindCoverage, Vec<String>) {
    let (hit, miss): (Vec<String>, Vec<String>) = types.iter().cloned().partition(|t| covered(t));
    let ratio = if types.is_empty() {
        1.0
    } else {
        hit.len() as f64 / types.len() as f64
    };
    (
        KindCoverage {
            covered_types: hit,
            total_types: types.len(),
            coverage_ratio: ratio,
        },
        miss,
    )
}

pub fn coverage_score(entity_ratio: f64, relation_ratio: f64) -> f64 {
    ENTITY_WEIGHT * entity_ratio + RELATION_WEIGHT * relation_ratio
}

pub fn query_coverage_feedback(req: &CoverageRequest) -> Result<CoverageReport, ToolError> {
    let s = &req.schema;
    if s.entity_types.is_empty() && s.relation_types.is_empty() {
        return Err(ToolError::NoSchema);
    }
    let kg = &req.extracted_kg;
    let ents = kg.covered_entity_types();
    let rels = kg.covered_relation_types();
    let (ec, missing_e) = kind_coverage(&s.entity_types, |t| ents.contains(t));
    let (rc, missing_r) = kind_coverage(&s.relation_types, |t| rels.contains(t));
    let score = coverage_score(ec.coverage_ratio, rc.coverage_ratio);

    let priority = match &req.priority_types {
        Some(p) if !p.is_empty() => {
            let (hit, miss): (Vec<String>, Vec<String>) = p
                .iter()
                .cloned()
                .partition(|t| ents.contains(t.as_str()) || rels.contains(t.as_str()));
            PriorityAnalysis {
                has_priority: true,
                priority_types: p.clone(),
                priority_coverage_ratio: hit.len() as f64 / p.len() as f64,
                covered_priority: hit,
                missing_priority: miss,
            }
        }
        _ => PriorityAnalysis {
            has_priority: false,
            priority_types: Vec::new(),
            covered_priority: Vec::new(),
            missing_priority: Vec::new(),
            priority_coverage_ratio: 0.0,
        },
    };

    let lower = req.text.to_lowercase();
    let mut recs = Vec::new();
    for t in &priority.missing_priority {
        recs.push(format!("Priority type {t} is missing; extract it first"));
    }
    for t in missing_e.iter().chain(&missing_r) {
        if lower.contains(&t.to_lowercase()) {
            recs.push(format!("The text mentions \"{t}\"; look for instances of this type"));
        } else {
            recs.push(format!("No {t} extracted; check the text for this type"));
        }
    }
    if score >= 0.9 {
        recs.push("Coverage is adequate".to_string());
    }

    Ok(CoverageReport {
        schema_info: SchemaInfo {
            entity_types: s.entity_types.clone(),
            relation_types: s.relation_types.clone(),
            total_types: s.total_types(),
            schema_complexity: schema_complexity_label(s.total_types()).into(),
        },
        type_coverage: TypeCoverage {
            entity_coverage: ec,
            relation_coverage: rc,
            overall_coverage: score,
        },
        missing_types: MissingTypes {
            missing_entity_types: missing_e,
            missing_relation_types: missing_r,
        },
        priority_analysis: priority,
        coverage_score: score,
        recommendations: recs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::RelationMention;

    fn req(kg: ExtractionResult, priority: Option<Vec<String>>) -> CoverageRequest {
        CoverageRequest {
            text: "Alice works for Acme in Paris.".into(),
            schema: Schema::new(["Person", "Org", "City", "Product"], ["works_for"]),
            extracted_kg: kg,
            priority_types: priority,
        }
    }

    #[test]
    fn half_entities_all_relations() {
        let mut kg = ExtractionResult::default();
        kg.add_entity("Person", "Alice").add_entity("Org", "Acme");
        kg.add_relation("works_for", RelationMention::new("Alice", "Acme"));
        let r = query_coverage_feedback(&req(kg, None)).unwrap();
        assert_eq!(r.coverage_score, 0.7);
        assert_eq!(r.missing_types.missing_entity_types, ["City", "Product"]);
        assert!(!r.priority_analysis.has_priority);
    }

    #[test]
    fn full_coverage() {
        let mut kg = ExtractionResult::default();
        for (t, n) in [
            ("Person", "Alice"),
            ("Org", "Acme"),
            ("City", "Paris"),
            ("Product", "X"),
        ] {
            kg.add_entity(t, n);
        }
        kg.add_relation("works_for", RelationMention::new("Alice", "Acme"));
        let r = query_coverage_feedback(&req(kg, Some(vec!["City".into(), "works_for".into()]))).unwrap();
        assert_eq!(r.coverage_score, 1.0);
        assert!(r.missing_types.missing_entity_types.is_empty());
        assert!(r.missing_types.missing_relation_types.is_empty());
        assert_eq!(r.priority_analysis.priority_coverage_ratio, 1.0);
    }

    #[test]
    fn types_outside_schema_are_ignored() {
        let mut kg = ExtractionResult::default();
        kg.add_entity("Alien", "Zork");
        let r = query_coverage_feedback(&req(kg, None)).unwrap();
        assert_eq!(r.coverage_score, 0.0);
    }
}
