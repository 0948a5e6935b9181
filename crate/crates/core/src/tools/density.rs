//! Extraction density assessment, the mandatory first check after every
//! extraction attempt.

use serde::{Deserialize, Serialize};

use super::text::{complexity, expected_density, per_1k, text_stats, ComplexityFeatures, ExpectedDensity, TextStats};
use super::ToolError;
use crate::extraction::{ExtractionResult, Schema};

/// Entity and relation densities must be within this ratio of each other
/// (relative to their expectations) to count as balanced.
pub const BALANCE_FLOOR: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityRequest {
    pub text: String,
    pub schema: Schema,
    pub extracted_kg: ExtractionResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurrentDensity {
    pub total_entities: usize,
    pub total_relations: usize,
    pub total_kg_elements: usize,
    pub entity_type_count: usize,
    pub relation_type_count: usize,
    pub entities_per_1k_tokens: f64,
    pub relations_per_1k_tokens: f64,
    pub kg_density_per_1k_tokens: f64,
    pub entity_relation_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssessmentLevel {
    Insufficient,
    Moderate,
    Adequate,
    Excellent,
    OverExtraction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityAssessment {
    pub entity_density_ratio: f64,
    pub relation_density_ratio: f64,
    pub overall_density_score: f64,
    pub assessment_level: AssessmentLevel,
    pub is_adequate: bool,
    pub meets_minimum_thresholds: bool,
    pub potential_over_extraction: bool,
    pub balance_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub text_stats: TextStats,
    pub current_density: CurrentDensity,
    pub expected_density: ExpectedDensity,
    pub complexity_features: ComplexityFeatures,
    pub density_assessment: DensityAssessment,
    pub needs_more_extraction: bool,
    pub recommendations: Vec<String>,
}

/// Adequacy threshold, rising from 0.65 to 0.80 with text complexity.
pub fn adequacy_threshold(complexity_score: f64) -> f64 {
    0.65 + 0.15 * complexity_score
}

/// The inputs the extraction decision depends on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityInputs {
    pub entities_per_1k: f64,
    pub relations_per_1k: f64,
    pub complexity_score: f64,
    pub expected: ExpectedDensity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub assessment: DensityAssessment,
    pub needs_more_extraction: bool,
}

/// Decision logic: more extraction is needed when either density is below
/// its minimum, the two are unbalanced, or the overall score misses the
/// adequacy threshold; never when a maximum is exceeded.
pub fn decide(x: &DensityInputs) -> Decision {
    let ex = &x.expected;
    let re = x.entities_per_1k / ex.expected_entities_per_1k;
    let rr = x.relations_per_1k / ex.expected_relations_per_1k;
    let hi = re.max(rr);
    let balance_score = if hi > 0.0 { re.min(rr) / hi } else { 0.0 };
    let overall_density_score = 0.5 * re.min(1.0) + 0.5 * rr.min(1.0);
    let entity_low = x.entities_per_1k < ex.min_entities_per_1k;
    let relation_low = x.relations_per_1k < ex.min_relations_per_1k;
    let over = x.entities_per_1k > ex.max_entities_per_1k || x.relations_per_1k > ex.max_relations_per_1k;
    let needs = !over
        && (entity_low
            || relation_low
            || balance_score < BALANCE_FLOOR
            || overall_density_score < adequacy_threshold(x.complexity_score));
    let level = if over {
        AssessmentLevel::OverExtraction
    } else if !needs {
        if re >= 1.0 && rr >= 1.0 {
            AssessmentLevel::Excellent
        } else {
            AssessmentLevel::Adequate
        }
    } else if !entity_low || !relation_low {
        AssessmentLevel::Moderate
    } else {
        AssessmentLevel::Insufficient
    };
    Decision {
        assessment: DensityAssessment {
            entity_density_ratio: re,
            relation_density_ratio: rr,
            overall_density_score,
            assessment_level: level,
            is_adequate: !needs && !over,
            meets_minimum_thresholds: !entity_low && !relation_low,
            potential_over_extraction: over,
            balance_score,
        },
        needs_more_extraction: needs,
    }
}

pub fn query_extraction_density(req: &DensityRequest) -> Result<DensityReport, ToolError> {
    let stats = text_stats(&req.text);
    if stats.token_count == 0 {
        return Err(ToolError::NoText);
    }
    if req.schema.entity_types.is_empty() && req.schema.relation_types.is_empty() {
        return Err(ToolError::NoSchema);
    }
    let kg = &req.extracted_kg;
    let features = complexity(&req.text, &req.schema);
    let expected = expected_density(&req.schema, features.complexity_score);
    let (ne, nr) = (kg.entity_count(), kg.relation_count());
    let current = CurrentDensity {
        total_entities: ne,
        total_relations: nr,
        total_kg_elements: ne + nr,
        entity_type_count: kg.covered_entity_types().len(),
        relation_type_count: kg.covered_relation_types().len(),
        entities_per_1k_tokens: per_1k(ne, stats.token_count),
        relations_per_1k_tokens: per_1k(nr, stats.token_count),
        kg_density_per_1k_tokens: per_1k(ne + nr, stats.token_count),
        entity_relation_ratio: ne as f64 / nr.max(1) as f64,
    };
    let d = decide(&DensityInputs {
        entities_per_1k: current.entities_per_1k_tokens,
        relations_per_1k: current.relations_per_1k_tokens,
        complexity_score: features.complexity_score,
        expected,
    });
    let recommendations = recommend(&current, &expected, &d, req.domain.as_deref());
    Ok(DensityReport {
        text_stats: stats,
        current_density: current,
        expected_density: expected,
        complexity_features: features,
        density_assessment: d.assessment,
        needs_more_extraction: d.needs_more_extraction,
        recommendations,
    })
}

fn recommend(c: &CurrentDensity, e: &ExpectedDensity, d: &Decision, domain: Option<&str>) -> Vec<String> {
    let a = &d.assessment;
    let mut out = Vec::new();
    if a.potential_over_extraction {
        out.push("Density exceeds the maximum threshold; remove low-confidence or redundant items".to_string());
    }
    if c.entities_per_1k_tokens < e.min_entities_per_1k {
        out.push(format!(
            "Entity density {:.2} per 1k tokens is below the minimum {:.2}; extract more entities",
            c.entities_per_1k_tokens, e.min_entities_per_1k
        ));
    }
    if c.relations_per_1k_tokens < e.min_relations_per_1k {
        out.push(format!(
            "Relation density {:.2} per 1k tokens is below the minimum {:.2}; extract more relations",
            c.relations_per_1k_tokens, e.min_relations_per_1k
        ));
    }
    if a.balance_score < BALANCE_FLOOR && !a.potential_over_extraction {
        out.push("Entities and relations are unbalanced; extract the under-represented kind".to_string());
    }
    if let Some(dom) = domain {
        out.push(format!("Check {dom}-specific terminology for missed entities"));
    }
    if d.needs_more_extraction {
        out.push("Re-run extraction and call this tool again".to_string());
    } else if !a.potential_over_extraction {
        out.push("Density is adequate; proceed to entity disambiguation".to_string());
    }
    out
}
