//! Multi-aspect extraction quality: consistency, completeness, accuracy and
//! schema compliance, blended 25 / 30 / 30 / 15.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::text::{complexity, expected_density, per_1k, text_stats};
use crate::extraction::{ExtractionResult, Schema};
use crate::reward::exact_sum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    Consistency,
    Completeness,
    Accuracy,
    SchemaCompliance,
}

impl Aspect {
    pub const ALL: [Aspect; 4] = [
        Aspect::Consistency,
        Aspect::Completeness,
        Aspect::Accuracy,
        Aspect::SchemaCompliance,
    ];

    pub fn weight(self) -> f64 {
        match self {
            Aspect::Completeness | Aspect::Accuracy => 0.30,
            Aspect::Consistency => 0.25,
            Aspect::SchemaCompliance => 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityRequest {
    pub extracted_kg: ExtractionResult,
    pub schema: Schema,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation_aspects: Option<Vec<Aspect>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityLevel {
    Excellent,
    Good,
    Fair,
    Poor,
    VeryPoor,
}

impl QualityLevel {
    pub fn of(score: f64) -> Self {
        match score {
            s if s >= 0.9 => Self::Excellent,
            s if s >= 0.8 => Self::Good,
            s if s >= 0.7 => Self::Fair,
            s if s >= 0.6 => Self::Poor,
            _ => Self::VeryPoor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyDetails {
    pub entity_naming_consistency: f64,
    pub relation_consistency: f64,
    pub duplicate_entities: usize,
    pub conflicting_relations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletenessDetails {
    pub missing_entity_types: Vec<String>,
    pub missing_relation_types: Vec<String>,
    pub entity_type_coverage: f64,
    pub relation_type_coverage: f64,
    pub extraction_density: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyDetails {
    pub entities_not_in_text: usize,
    pub relations_not_in_text: usize,
    pub boundary_errors: usize,
    pub type_misclassifications: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplianceDetails {
    pub valid_entity_types: usize,
    pub invalid_entity_types: usize,
    pub valid_relation_types: usize,
    pub invalid_relation_types: usize,
    pub structure_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectResult<D> {
    pub score: f64,
    pub issues: Vec<String>,
    pub details: D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResults {
    pub consistency: AspectResult<ConsistencyDetails>,
    pub completeness: AspectResult<CompletenessDetails>,
    pub accuracy: AspectResult<AccuracyDetails>,
    pub schema_compliance: AspectResult<ComplianceDetails>,
}

impl EvaluationResults {
    pub fn score(&self, a: Aspect) -> f64 {
        match a {
            Aspect::Consistency => self.consistency.score,
            Aspect::Completeness => self.completeness.score,
            Aspect::Accuracy => self.accuracy.score,
            Aspect::SchemaCompliance => self.schema_compliance.score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub evaluation_aspects: Vec<Aspect>,
    pub evaluation_results: EvaluationResults,
    pub overall_score: f64,
    pub quality_level: QualityLevel,
    pub improvement_suggestions: Vec<String>,
    pub detailed_metrics: EvaluationResults,
}

/// Weighted mean of the selected aspect scores, weights renormalized over
/// the selection. With all four aspects this is the plain weighted sum.
pub fn overall_score(scores: &BTreeMap<Aspect, f64>) -> f64 {
    let total_w: f64 = exact_sum(&scores.keys().map(|a| a.weight()).collect::<Vec<_>>());
    if total_w == 0.0 {
        return 0.0;
    }
    let terms: Vec<f64> = scores.iter().map(|(a, s)| a.weight() * s).collect();
    exact_sum(&terms) / total_w
}

fn ratio_or_one(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

fn consistency(kg: &ExtractionResult, schema: &Schema) -> AspectResult<ConsistencyDetails> {
    let mut duplicates = 0;
    let mut issues = Vec::new();
    for (t, names) in &kg.entities {
        let mut seen = BTreeSet::new();
        for n in names {
            if !seen.insert(n.to_lowercase()) {
                duplicates += 1;
                issues.push(format!("Duplicate {t} entity: {n}"));
            }
        }
    }
    let pairs = |rel: &str| -> BTreeSet<(&str, &str)> {
        kg.relations
            .get(rel)
            .map(|ms| ms.iter().map(|m| (m.subject.as_str(), m.object.as_str())).collect())
            .unwrap_or_default()
    };
    let mut conflicts = 0;
    for [a, b] in &schema.exclusive_relations {
        for (s, o) in pairs(a).intersection(&pairs(b)) {
            conflicts += 1;
            issues.push(format!("Conflicting relations {a} and {b} between {s} and {o}"));
        }
    }
    let (ne, nr) = (kg.entity_count(), kg.relation_count());
    let sub = |bad: usize, n: usize| {
        if n == 0 {
            1.0
        } else {
            (1.0 - bad as f64 / n as f64).max(0.0)
        }
    };
    AspectResult {
        score: sub(duplicates + conflicts, ne + nr),
        issues,
        details: ConsistencyDetails {
            entity_naming_consistency: sub(duplicates, ne),
            relation_consistency: sub(conflicts, nr),
            duplicate_entities: duplicates,
            conflicting_relations: conflicts,
        },
    }
}

/// Type coverage (0.7, itself split 0.6 / 0.4) blended with the density
/// of extracted items relative to the expected density (0.3).
fn completeness(kg: &ExtractionResult, schema: &Schema, text: &str) -> AspectResult<CompletenessDetails> {
    let ents = kg.covered_entity_types();
    let rels = kg.covered_relation_types();
    let missing_e: Vec<String> = schema
        .entity_types
        .iter()
        .filter(|t| !ents.contains(t.as_str()))
        .cloned()
        .collect();
    let missing_r: Vec<String> = schema
        .relation_types
        .iter()
        .filter(|t| !rels.contains(t.as_str()))
        .cloned()
        .collect();
    let e_cov = ratio_or_one(schema.entity_types.len() - missing_e.len(), schema.entity_types.len());
    let r_cov = ratio_or_one(
        schema.relation_types.len() - missing_r.len(),
        schema.relation_types.len(),
    );
    let tokens = text_stats(text).token_count;
    let density = per_1k(kg.item_count(), tokens);
    let exp = expected_density(schema, complexity(text, schema).complexity_score);
    let expected = exp.expected_entities_per_1k + exp.expected_relations_per_1k;
    let density_part = if tokens == 0 {
        0.0
    } else {
        (density / expected).min(1.0)
    };
    let score = 0.7 * (0.6 * e_cov + 0.4 * r_cov) + 0.3 * density_part;
    let mut issues: Vec<String> = missing_e
        .iter()
        .chain(&missing_r)
        .map(|t| format!("No instances of schema type {t}"))
        .collect();
    if density_part < 1.0 {
        issues.push(format!(
            "Extraction density {density:.2} per 1k tokens is below the expected {expected:.2}"
        ));
    }
    AspectResult {
        score: score.clamp(0.0, 1.0),
        issues,
        details: CompletenessDetails {
            missing_entity_types: missing_e,
            missing_relation_types: missing_r,
            entity_type_coverage: e_cov,
            relation_type_coverage: r_cov,
            extraction_density: density,
        },
    }
}

fn has_boundary_error(name: &str) -> bool {
    let edge =
        |c: Option<char>| c.is_some_and(|c| c.is_whitespace() || (c.is_ascii_punctuation() && !")].\"'".contains(c)));
    edge(name.chars().next()) || edge(name.chars().last())
}

/// Literal grounding: a name counts when it occurs verbatim in the text; a
/// relation when both of its endpoints do.
fn accuracy(kg: &ExtractionResult, text: &str) -> AspectResult<AccuracyDetails> {
    let grounded = |n: &str| !n.is_empty() && text.contains(n);
    let mut issues = Vec::new();
    let mut ent_missing = 0;
    let mut boundary = 0;
    for item in kg.entity_items() {
        if !grounded(&item.name) {
            ent_missing += 1;
            issues.push(format!(
                "{} entity \"{}\" does not appear in the text",
                item.etype, item.name
            ));
        }
        if has_boundary_error(&item.name) {
            boundary += 1;
            issues.push(format!("Entity \"{}\" has a boundary error", item.name));
        }
    }
    let mut rel_missing = 0;
    for r in kg.relation_items() {
        if !(grounded(&r.subject) && grounded(&r.object)) {
            rel_missing += 1;
            issues.push(format!(
                "Relation {} between {} and {} is not grounded in the text",
                r.rel_type, r.subject, r.object
            ));
        }
    }
    let mut names: BTreeMap<&str, usize> = BTreeMap::new();
    for ns in kg.entities.values() {
        for n in ns.iter().collect::<BTreeSet<_>>() {
            *names.entry(n.as_str()).or_default() += 1;
        }
    }
    let misclassified = names.values().filter(|&&c| c > 1).count();
    for (n, _) in names.iter().filter(|(_, &c)| c > 1) {
        issues.push(format!("\"{n}\" is listed under several entity types"));
    }
    let total = kg.item_count();
    AspectResult {
        score: ratio_or_one(total - ent_missing - rel_missing, total),
        issues,
        details: AccuracyDetails {
            entities_not_in_text: ent_missing,
            relations_not_in_text: rel_missing,
            boundary_errors: boundary,
            type_misclassifications: misclassified,
        },
    }
}

/// Fraction of used types (entity and relation) that the schema declares.
fn compliance(kg: &ExtractionResult, schema: &Schema) -> AspectResult<ComplianceDetails> {
    let mut issues = Vec::new();
    let (mut ve, mut ie, mut vr, mut ir) = (0, 0, 0, 0);
    for t in kg.covered_entity_types() {
        if schema.has_entity_type(t) {
            ve += 1;
        } else {
            ie += 1;
            issues.push(format!("Entity type {t} is not in the schema"));
        }
    }
    for t in kg.covered_relation_types() {
        if schema.has_relation_type(t) {
            vr += 1;
        } else {
            ir += 1;
            issues.push(format!("Relation type {t} is not in the schema"));
        }
    }
    let names: BTreeSet<&str> = kg.entities.values().flatten().map(String::as_str).collect();
    let mut violations = 0;
    for r in kg.relation_items() {
        for end in [&r.subject, &r.object] {
            if !names.contains(end.as_str()) {
                violations += 1;
                issues.push(format!("Relation {} refers to unknown entity {end}", r.rel_type));
            }
        }
        if r.subject == r.object && !schema.selfloop_allowed(&r.rel_type) {
            violations += 1;
            issues.push(format!("Self-loop {} on {} is not allowed", r.rel_type, r.subject));
        }
    }
    AspectResult {
        score: ratio_or_one(ve + vr, ve + vr + ie + ir),
        issues,
        details: ComplianceDetails {
            valid_entity_types: ve,
            invalid_entity_types: ie,
            valid_relation_types: vr,
            invalid_relation_types: ir,
            structure_violations: violations,
        },
    }
}

pub fn evaluate(kg: &ExtractionResult, schema: &Schema, text: &str) -> EvaluationResults {
    EvaluationResults {
        consistency: consistency(kg, schema),
        completeness: completeness(kg, schema, text),
        accuracy: accuracy(kg, text),
        schema_compliance: compliance(kg, schema),
    }
}

/// Overall quality over all four aspects.
pub fn quality_score(kg: &ExtractionResult, schema: &Schema, text: &str) -> f64 {
    let r = evaluate(kg, schema, text);
    overall_score(&Aspect::ALL.iter().map(|&a| (a, r.score(a))).collect())
}

fn suggestion(a: Aspect) -> &'static str {
    match a {
        Aspect::Consistency => "Merge duplicate entities and resolve conflicting relations",
        Aspect::Completeness => "Extract instances of the missing schema types",
        Aspect::Accuracy => "Use names exactly as they appear in the text",
        Aspect::SchemaCompliance => "Restrict extraction to types declared in the schema",
    }
}

pub fn query_quality_metrics(req: &QualityRequest) -> QualityReport {
    let aspects: Vec<Aspect> = match &req.evaluation_aspects {
        Some(a) if !a.is_empty() => a.iter().copied().collect::<BTreeSet<_>>().into_iter().collect(),
        _ => Aspect::ALL.to_vec(),
    };
    let results = evaluate(&req.extracted_kg, &req.schema, &req.text);
    let scores: BTreeMap<Aspect, f64> = aspects.iter().map(|&a| (a, results.score(a))).collect();
    let overall = overall_score(&scores);
    let mut suggestions: Vec<String> = aspects
        .iter()
        .filter(|&&a| results.score(a) < 0.8)
        .map(|&a| suggestion(a).to_string())
        .collect();
    if suggestions.is_empty() {
        suggestions.push("Quality is good; no changes needed".into());
    }
    QualityReport {
        evaluation_aspects: aspects,
        detailed_metrics: results.clone(),
        evaluation_results: results,
        overall_score: overall,
        quality_level: QualityLevel::of(overall),
        improvement_suggestions: suggestions,
    }
}
