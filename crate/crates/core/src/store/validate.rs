//! Whole-store constraint checking.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{entity_id, KnowledgeGraph, RelationKey};
use crate::extraction::Schema;

/// One broken invariant. Relation-level variants carry the map key under
/// which the offending row is stored.
#[derive(Debug, Clone, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    EmptyName {
        id: String,
    },
    KeyMismatch {
        key: String,
        detail: String,
    },
    DuplicateEntity {
        name: String,
        etype: String,
        ids: Vec<String>,
    },
    InvalidEntityType {
        id: String,
        etype: String,
    },
    TimestampOrder {
        item: String,
    },
    InvalidRelationType {
        key: RelationKey,
        staged: bool,
    },
    SelfLoop {
        key: RelationKey,
        staged: bool,
    },
    OrphanedEndpoint {
        key: RelationKey,
        missing: String,
        staged: bool,
    },
    DuplicateRelation {
        key: RelationKey,
        staged: bool,
    },
    ConfidenceOutOfRange {
        key: RelationKey,
        confidence: f64,
        staged: bool,
    },
    ZeroVotes {
        key: RelationKey,
    },
}

/// Check every store invariant plus conformance to `schema`.
///
/// The result is sorted and complete: it is empty exactly when the store is
/// consistent.
pub fn validate_graph(kg: &KnowledgeGraph, schema: &Schema) -> Vec<Violation> {
    let mut out = Vec::new();

    let mut by_name_type: BTreeMap<(&str, &str), Vec<String>> = BTreeMap::new();
    for (key, e) in &kg.entities {
        if key != &e.id {
            out.push(Violation::KeyMismatch {
                key: key.clone(),
                detail: format!("entity stored under {key} has id {}", e.id),
            });
        } else if e.id != entity_id(&e.etype, &e.name) {
            out.push(Violation::KeyMismatch {
                key: key.clone(),
                detail: format!("id does not match ({}, {})", e.etype, e.name),
            });
        }
        if e.name.trim().is_empty() {
            out.push(Violation::EmptyName { id: e.id.clone() });
        }
        if !schema.has_entity_type(&e.etype) {
            out.push(Violation::InvalidEntityType {
                id: e.id.clone(),
                etype: e.etype.clone(),
            });
        }
        if e.last_seen < e.created_at {
            out.push(Violation::TimestampOrder { item: e.id.clone() });
        }
        by_name_type
            .entry((e.name.as_str(), e.etype.as_str()))
            .or_default()
            .push(key.clone());
    }
    for ((name, etype), ids) in by_name_type {
        if ids.len() > 1 {
            out.push(Violation::DuplicateEntity {
                name: name.into(),
                etype: etype.into(),
                ids,
            });
        }
    }

    let promoted = kg
        .relations
        .iter()
        .map(|(k, r)| (k, r.key(), r.confidence, Some((r.created_at, r.last_seen)), None));
    let staged = kg.staged.iter().map(|(k, p)| {
        (
            k,
            p.key(),
            p.confidence,
            Some((p.created_at, p.last_seen)),
            Some(p.votes),
        )
    });
    for (is_staged, rows) in [(false, promoted.collect::<Vec<_>>()), (true, staged.collect())] {
        let mut seen: BTreeMap<RelationKey, usize> = BTreeMap::new();
        for (map_key, inner, conf, times, votes) in rows {
            if map_key != &inner {
                out.push(Violation::KeyMismatch {
                    key: format!("{map_key:?}"),
                    detail: format!("row fields are {inner:?}"),
                });
            }
            *seen.entry(inner.clone()).or_default() += 1;
            if !schema.has_relation_type(&inner.rel_type) {
                out.push(Violation::InvalidRelationType {
                    key: map_key.clone(),
                    staged: is_staged,
                });
            }
            if inner.is_self_loop() && !schema.selfloop_allowed(&inner.rel_type) {
                out.push(Violation::SelfLoop {
                    key: map_key.clone(),
                    staged: is_staged,
                });
            }
            for id in [&inner.src_id, &inner.dst_id] {
                if !kg.entities.contains_key(id) {
                    out.push(Violation::OrphanedEndpoint {
                        key: map_key.clone(),
                        missing: id.clone(),
                        staged: is_staged,
                    });
                }
            }
            if !(0.0..=1.0).contains(&conf) {
                out.push(Violation::ConfidenceOutOfRange {
                    key: map_key.clone(),
                    confidence: conf,
                    staged: is_staged,
                });
            }
            if let Some((created, last)) = times {
                if last < created {
                    out.push(Violation::TimestampOrder {
                        item: format!("{map_key:?}"),
                    });
                }
            }
            if votes == Some(0) {
                out.push(Violation::ZeroVotes { key: map_key.clone() });
            }
        }
        for (key, n) in seen {
            if n > 1 {
                out.push(Violation::DuplicateRelation { key, staged: is_staged });
            }
        }
    }

    out.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::{ExtractionResult, RelationMention};
    use crate::store::Relation;
    use chrono::{TimeZone, Utc};

    fn schema(whitelist: &[&str]) -> Schema {
        Schema::new(["P"], ["r", "loop"]).with_selfloop_whitelist(whitelist.iter().copied())
    }

    #[test]
    fn empty_graph_is_clean() {
        assert!(validate_graph(&KnowledgeGraph::new(), &schema(&[])).is_empty());
    }

    #[test]
    fn selfloop_whitelist() {
        let now = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap();
        let mut kg = KnowledgeGraph::new();
        let mut d = ExtractionResult::default();
        d.add_entity("P", "a");
        kg.upsert_extraction(&d, "s", now);
        let id = entity_id("P", "a");
        let key = RelationKey::new(&id, &id, "loop");
        kg.relations.insert(
            key.clone(),
            Relation {
                src_id: id.clone(),
                dst_id: id.clone(),
                rel_type: "loop".into(),
                confidence: 0.5,
                evidence: vec![],
                created_at: now,
                last_seen: now,
                episode_tag: None,
                snapshot: None,
            },
        );
        assert!(validate_graph(&kg, &schema(&["loop"])).is_empty());
        let v = validate_graph(&kg, &schema(&[]));
        assert_eq!(v, vec![Violation::SelfLoop { key, staged: false }]);
    }

    #[test]
    fn orphan_and_type_detected() {
        let now = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap();
        let mut kg = KnowledgeGraph::new();
        let mut d = ExtractionResult::default();
        d.add_entity("P", "a").add_entity("P", "b").add_entity("Q", "c");
        d.add_relation("r", RelationMention::new("a", "b"));
        kg.upsert_extraction(&d, "s", now);
        kg.entities.remove(&entity_id("P", "b"));
        let v = validate_graph(&kg, &schema(&[]));
        assert_eq!(v.len(), 2);
        assert!(v.iter().any(|x| matches!(x, Violation::OrphanedEndpoint { .. })));
        assert!(v.iter().any(|x| matches!(x, Violation::InvalidEntityType { .. })));
    }
}
