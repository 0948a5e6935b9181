//! Constraint predicates over candidate edge sets.
//!
//! Each predicate returns one slack per potential violation; the penalty is
//! the sum of squared positive slacks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use super::EdgeKey;
use crate::extraction::Schema;
use crate::store::KnowledgeGraph;

/// Name and type of an entity referenced by edge keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityInfo {
    pub name: String,
    pub etype: String,
}

/// Side information the constraint predicates may consult.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateContext {
    pub schema: Option<Schema>,
    pub entities: BTreeMap<String, EntityInfo>,
}

impl UpdateContext {
    pub fn from_graph(kg: &KnowledgeGraph, schema: Option<Schema>) -> Self {
        Self {
            schema: schema.or_else(|| kg.schema.clone()),
            entities: kg
                .entities
                .values()
                .map(|e| {
                    (
                        e.id.clone(),
                        EntityInfo {
                            name: e.name.clone(),
                            etype: e.etype.clone(),
                        },
                    )
                })
                .collect(),
        }
    }
}

pub trait Constraint: fmt::Debug + Send + Sync {
    fn name(&self) -> &str;
    fn slacks(&self, g: &BTreeSet<EdgeKey>, ctx: &UpdateContext) -> Vec<f64>;
}

/// Relation types and endpoint entity types must belong to the schema.
#[derive(Debug, Clone, Copy, Default)]
pub struct SchemaTypes;

impl Constraint for SchemaTypes {
    fn name(&self) -> &str {
        "schema_type"
    }

    fn slacks(&self, g: &BTreeSet<EdgeKey>, ctx: &UpdateContext) -> Vec<f64> {
        let Some(schema) = &ctx.schema else { return Vec::new() };
        let bad_entity = |id: &str| ctx.entities.get(id).is_some_and(|e| !schema.has_entity_type(&e.etype));
        g.iter()
            .filter(|e| !schema.has_relation_type(&e.rel_type) || bad_entity(&e.src_id) || bad_entity(&e.dst_id))
            .map(|_| 1.0)
            .collect()
    }
}

/// Self-loops are allowed only for whitelisted relation types.
#[derive(Debug, Clone, Copy, Default)]
pub struct SelfLoops;

impl Constraint for SelfLoops {
    fn name(&self) -> &str {
        "self_loop"
    }

    fn slacks(&self, g: &BTreeSet<EdgeKey>, ctx: &UpdateContext) -> Vec<f64> {
        g.iter()
            .filter(|e| e.is_self_loop() && !ctx.schema.as_ref().is_some_and(|s| s.selfloop_allowed(&e.rel_type)))
            .map(|_| 1.0)
            .collect()
    }
}

/// Edges whose endpoints share case-folded names and types with another
/// edge of the same relation type; one unit of slack per extra copy.
#[derive(Debug, Clone, Copy, Default)]
pub struct DuplicateKeys;

impl Constraint for DuplicateKeys {
    fn name(&self) -> &str {
        "duplicate_key"
    }

    fn slacks(&self, g: &BTreeSet<EdgeKey>, ctx: &UpdateContext) -> Vec<f64> {
        let fold = |id: &str| match ctx.entities.get(id) {
            Some(e) => format!("{}\u{1f}{}", e.etype, e.name.to_lowercase()),
            None => id.to_string(),
        };
        let mut groups: BTreeMap<(String, String, &str), usize> = BTreeMap::new();
        for e in g {
            *groups
                .entry((fold(&e.src_id), fold(&e.dst_id), e.rel_type.as_str()))
                .or_default() += 1;
        }
        groups
            .values()
            .flat_map(|&n| std::iter::repeat_n(1.0, n.saturating_sub(1)))
            .collect()
    }
}

/// Mutually exclusive relation types declared by the schema may not both
/// connect the same ordered pair.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExclusiveRelations;

impl Constraint for ExclusiveRelations {
    fn name(&self) -> &str {
        "exclusive_relation"
    }

    fn slacks(&self, g: &BTreeSet<EdgeKey>, ctx: &UpdateContext) -> Vec<f64> {
        let Some(schema) = &ctx.schema else { return Vec::new() };
        let mut out = Vec::new();
        for [a, b] in &schema.exclusive_relations {
            for e in g.iter().filter(|e| &e.rel_type == a) {
                let twin = EdgeKey::new(&e.src_id, &e.dst_id, b.as_str());
                if g.contains(&twin) {
                    out.push(1.0);
                }
            }
        }
        out
    }
}

/// Shared, ordered list of constraint predicates.
#[derive(Clone)]
pub struct ConstraintSet(pub Vec<Arc<dyn Constraint>>);

impl ConstraintSet {
    pub fn none() -> Self {
        Self(Vec::new())
    }

    /// `sum_j max(0, slack_j)^2` over every predicate.
    pub fn penalty(&self, g: &BTreeSet<EdgeKey>, ctx: &UpdateContext) -> f64 {
        self.0
            .iter()
            .flat_map(|c| c.slacks(g, ctx))
            .map(|s| s.max(0.0).powi(2))
            .fold(0.0, |a, x| a + x)
    }

    pub fn names(&self) -> Vec<&str> {
        self.0.iter().map(|c| c.name()).collect()
    }
}

impl Default for ConstraintSet {
    fn default() -> Self {
        Self(vec![
            Arc::new(SchemaTypes),
            Arc::new(SelfLoops),
            Arc::new(DuplicateKeys),
            Arc::new(ExclusiveRelations),
        ])
    }
}

impl fmt::Debug for ConstraintSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.names()).finish()
    }
}
