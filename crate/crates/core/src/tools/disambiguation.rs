//! Matching extracted entities against entities already in the store.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::text::trigram_jaccard;
use super::ToolError;
use crate::extraction::ExtractionResult;
use crate::store::{Entity, KnowledgeGraph};

pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.8;
/// Matches below this confidence are flagged for manual verification.
pub const VERIFY_BELOW: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStrategy {
    #[default]
    ExactMatch,
    SemanticSimilarity,
}

impl FromStr for MatchStrategy {
    type Err = ToolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact_match" => Ok(Self::ExactMatch),
            "semantic_similarity" => Ok(Self::SemanticSimilarity),
            _ => Err(ToolError::InvalidStrategy(s.to_string())),
        }
    }
}

impl fmt::Display for MatchStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ExactMatch => "exact_match",
            Self::SemanticSimilarity => "semantic_similarity",
        })
    }
}

impl MatchStrategy {
    /// Name similarity in [0, 1]. Exact matching is case-insensitive and
    /// all-or-nothing.
    pub fn similarity(self, a: &str, b: &str) -> f64 {
        match self {
            Self::ExactMatch => {
                if a.to_lowercase() == b.to_lowercase() {
                    1.0
                } else {
                    0.0
                }
            }
            Self::SemanticSimilarity => trigram_jaccard(a, b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisambiguationRequest {
    pub extracted_kg: ExtractionResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disambiguation_strategy: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginalEntity {
    #[serde(rename = "type")]
    pub etype: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntity {
    pub name: String,
    pub properties: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub candidate: CandidateEntity,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisambiguationResult {
    pub original_entity: OriginalEntity,
    pub candidates: Vec<Candidate>,
    pub best_match: Option<Candidate>,
    pub is_disambiguated: bool,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relationship {
    #[serde(rename = "type")]
    pub rel_type: String,
    pub target: Value,
    pub properties: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationshipsResult {
    pub entity: Value,
    pub relationships: Vec<Relationship>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisambiguationSummary {
    pub total_entities: usize,
    pub disambiguated_entities: usize,
    pub disambiguation_rate: f64,
    pub average_confidence: f64,
    pub unmatched_entities: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisambiguationReport {
    pub disambiguation_results: Vec<DisambiguationResult>,
    pub relationships_results: Vec<RelationshipsResult>,
    pub quality_score: f64,
    pub disambiguation_strategy: MatchStrategy,
    pub similarity_threshold: f64,
    pub standardization_suggestions: Vec<String>,
    pub summary: DisambiguationSummary,
}

/// `0.6 * disambiguated / total + 0.4 * mean match confidence`.
pub fn disambiguation_quality(disambiguated: usize, total: usize, average_confidence: f64) -> f64 {
    let rate = if total == 0 {
        0.0
    } else {
        disambiguated as f64 / total as f64
    };
    0.6 * rate + 0.4 * average_confidence
}

fn entity_value(e: &Entity) -> Value {
    json!({"id": e.id, "name": e.name, "type": e.etype})
}

fn candidate(e: &Entity, confidence: f64) -> Candidate {
    let mut properties = Map::new();
    properties.insert("id".into(), e.id.clone().into());
    properties.insert("type".into(), e.etype.clone().into());
    Candidate {
        candidate: CandidateEntity {
            name: e.name.clone(),
            properties,
        },
        confidence,
    }
}

/// Stored entities of the same type with positive similarity, best first
/// (ties by name).
pub fn rank_candidates<'a>(
    kg: &'a KnowledgeGraph,
    etype: &str,
    name: &str,
    strategy: MatchStrategy,
) -> Vec<(f64, &'a Entity)> {
    let mut out: Vec<(f64, &Entity)> = kg
        .entities_of_type(etype)
        .into_iter()
        .map(|e| (strategy.similarity(name, &e.name), e))
        .filter(|(s, _)| *s > 0.0)
        .collect();
    out.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.name.cmp(&b.1.name)));
    out
}

pub fn query_entity_disambiguation(
    req: &DisambiguationRequest,
    kg: &KnowledgeGraph,
) -> Result<DisambiguationReport, ToolError> {
    let strategy: MatchStrategy = match &req.disambiguation_strategy {
        Some(s) => s.parse()?,
        None => MatchStrategy::default(),
    };
    let threshold = req.similarity_threshold.unwrap_or(DEFAULT_SIMILARITY_THRESHOLD);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(ToolError::InvalidParam(format!(
            "similarity_threshold must lie in [0, 1], got {threshold}"
        )));
    }

    let mut results = Vec::new();
    let mut suggestions = Vec::new();
    let mut matched: BTreeSet<&str> = BTreeSet::new();
    let mut matched_conf = Vec::new();
    for item in req.extracted_kg.entity_items() {
        let ranked = rank_candidates(kg, &item.etype, &item.name, strategy);
        let best = ranked.first().filter(|(s, _)| *s >= threshold).copied();
        match best {
            Some((s, e)) => {
                matched.insert(e.id.as_str());
                matched_conf.push(s);
                if s < VERIFY_BELOW {
                    suggestions.push(format!(
                        "Verify that \"{}\" refers to stored {} \"{}\" (confidence {s:.2})",
                        item.name, item.etype, e.name
                    ));
                }
                if e.name != item.name {
                    suggestions.push(format!(
                        "Use the stored spelling \"{}\" instead of \"{}\"",
                        e.name, item.name
                    ));
                }
            }
            None => suggestions.push(format!(
                "No stored match for {} \"{}\"; it will be stored as a new entity",
                item.etype, item.name
            )),
        }
        results.push(DisambiguationResult {
            original_entity: OriginalEntity {
                etype: item.etype.clone(),
                name: item.name.clone(),
            },
            candidates: ranked.iter().map(|(s, e)| candidate(e, *s)).collect(),
            best_match: best.map(|(s, e)| candidate(e, s)),
            is_disambiguated: best.is_some(),
            confidence: best.map_or(0.0, |(s, _)| s),
        });
    }

    let relationships_results = matched
        .iter()
        .filter_map(|id| kg.entities.get(*id))
        .map(|e| RelationshipsResult {
            entity: entity_value(e),
            relationships: kg
                .relations_of(&e.id)
                .into_iter()
                .map(|r| {
                    let (other, direction) = if r.src_id == e.id {
                        (&r.dst_id, "outgoing")
                    } else {
                        (&r.src_id, "incoming")
                    };
                    let mut properties = Map::new();
                    properties.insert("confidence".into(), json!(r.confidence));
                    properties.insert("direction".into(), direction.into());
                    Relationship {
                        rel_type: r.rel_type.clone(),
                        target: kg
                            .entities
                            .get(other)
                            .map_or_else(|| json!({"id": other}), entity_value),
                        properties,
                    }
                })
                .collect(),
        })
        .collect();

    let total = results.len();
    let done = matched_conf.len();
    let average_confidence = if done == 0 {
        0.0
    } else {
        matched_conf.iter().sum::<f64>() / done as f64
    };
    Ok(DisambiguationReport {
        disambiguation_results: results,
        relationships_results,
        quality_score: disambiguation_quality(done, total, average_confidence),
        disambiguation_strategy: strategy,
        similarity_threshold: threshold,
        standardization_suggestions: suggestions,
        summary: DisambiguationSummary {
            total_entities: total,
            disambiguated_entities: done,
            disambiguation_rate: if total == 0 { 0.0 } else { done as f64 / total as f64 },
            average_confidence,
            unmatched_entities: total - done,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::RelationMention;
    use chrono::TimeZone;

    fn store() -> KnowledgeGraph {
        let mut kg = KnowledgeGraph::new();
        let mut x = ExtractionResult::default();
        x.add_entity("Org", "bws")
            .add_entity("Org", "Acme Corporation")
            .add_entity("Person", "Pat");
        x.add_relation("works_for", RelationMention::new("Pat", "bws"));
        let now = chrono::Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
        kg.upsert_extraction(&x, "test", now);
        kg
    }

    fn req(names: &[(&str, &str)], strategy: &str, threshold: Option<f64>) -> DisambiguationRequest {
        let mut x = ExtractionResult::default();
        for (t, n) in names {
            x.add_entity(t, n);
        }
        DisambiguationRequest {
            extracted_kg: x,
            disambiguation_strategy: Some(strategy.into()),
            similarity_threshold: threshold,
            context: None,
        }
    }

    #[test]
    fn exact_match_is_case_insensitive() {
        let kg = store();
        let r = query_entity_disambiguation(&req(&[("Org", "BWS")], "exact_match", None), &kg).unwrap();
        let d = &r.disambiguation_results[0];
        assert!(d.is_disambiguated);
        assert_eq!(d.confidence, 1.0);
        assert_eq!(r.relationships_results.len(), 1);
        assert_eq!(r.relationships_results[0].relationships[0].rel_type, "works_for");
        assert!(r
            .standardization_suggestions
            .iter()
            .any(|s| s.contains("stored spelling")));
    }

    #[test]
    fn type_must_agree() {
        let kg = store();
        let r = query_entity_disambiguation(&req(&[("Person", "bws")], "exact_match", None), &kg).unwrap();
        assert!(!r.disambiguation_results[0].is_disambiguated);
        assert!(r.disambiguation_results[0].candidates.is_empty());
    }

    #[test]
    fn semantic_threshold() {
        let kg = store();
        let r = query_entity_disambiguation(
            &req(&[("Org", "Acme Corporation Ltd")], "semantic_similarity", Some(0.5)),
            &kg,
        )
        .unwrap();
        let d = &r.disambiguation_results[0];
        assert!(d.is_disambiguated);
        assert!(d.confidence < 1.0);
        let strict = query_entity_disambiguation(
            &req(&[("Org", "Acme Corporation Ltd")], "semantic_similarity", Some(0.95)),
            &kg,
        )
        .unwrap();
        assert!(!strict.disambiguation_results[0].is_disambiguated);
    }

    #[test]
    fn quality_formula() {
        assert!((disambiguation_quality(2, 4, 0.9) - 0.66).abs() < 1e-12);
        assert_eq!(disambiguation_quality(0, 0, 0.0), 0.0);
    }

    #[test]
    fn unknown_strategy() {
        let kg = store();
        let e = query_entity_disambiguation(&req(&[("Org", "x")], "fuzzy", None), &kg).unwrap_err();
        assert_eq!(e.to_string(), "invalid strategy: fuzzy");
    }
}
