//! Extraction results and schemas in the tool wire format.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Target ontology for extraction.
///
/// Serialized with the tool field names (`entity_schema`, `relation_schema`).
/// `selfloop_whitelist` lists relation types allowed to connect an entity to
/// itself; `exclusive_relations` declares pairs of relation types that may
/// not both hold between the same subject and object.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    #[serde(rename = "entity_schema", alias = "entity_types")]
    pub entity_types: Vec<String>,
    #[serde(rename = "relation_schema", alias = "relation_types")]
    pub relation_types: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub selfloop_whitelist: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exclusive_relations: Vec<[String; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("empty type name in {0}")]
    EmptyName(&'static str),
    #[error("duplicate type name {name:?} in {list}")]
    Duplicate { list: &'static str, name: String },
}

impl Schema {
    pub fn new<E, R>(entity_types: E, relation_types: R) -> Self
    where
        E: IntoIterator,
        E::Item: Into<String>,
        R: IntoIterator,
        R::Item: Into<String>,
    {
        Self {
            entity_types: entity_types.into_iter().map(Into::into).collect(),
            relation_types: relation_types.into_iter().map(Into::into).collect(),
            selfloop_whitelist: Vec::new(),
            exclusive_relations: Vec::new(),
        }
    }

    pub fn with_selfloop_whitelist<I>(mut self, types: I) -> Self
    where
        I: IntoIterator,
        I::Item: Into<String>,
    {
        self.selfloop_whitelist = types.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_exclusive(mut self, a: &str, b: &str) -> Self {
        self.exclusive_relations.push([a.to_string(), b.to_string()]);
        self
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        check_names("entity_types", &self.entity_types)?;
        check_names("relation_types", &self.relation_types)?;
        check_names("selfloop_whitelist", &self.selfloop_whitelist)
    }

    pub fn has_entity_type(&self, t: &str) -> bool {
        self.entity_types.iter().any(|e| e == t)
    }

    pub fn has_relation_type(&self, t: &str) -> bool {
        self.relation_types.iter().any(|r| r == t)
    }

    pub fn selfloop_allowed(&self, rel_type: &str) -> bool {
        self.selfloop_whitelist.iter().any(|r| r == rel_type)
    }

    pub fn are_exclusive(&self, a: &str, b: &str) -> bool {
        self.exclusive_relations
            .iter()
            .any(|[x, y]| (x == a && y == b) || (x == b && y == a))
    }

    pub fn total_types(&self) -> usize {
        self.entity_types.len() + self.relation_types.len()
    }
}

fn check_names(list: &'static str, names: &[String]) -> Result<(), SchemaError> {
    let mut seen = BTreeSet::new();
    for n in names {
        if n.trim().is_empty() {
            return Err(SchemaError::EmptyName(list));
        }
        if !seen.insert(n.as_str()) {
            return Err(SchemaError::Duplicate { list, name: n.clone() });
        }
    }
    Ok(())
}

/// One `{"subject", "object"}` relation entry. `confidence` is an optional
/// extension used by the staging pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationMention {
    pub subject: String,
    pub object: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

impl RelationMention {
    pub fn new(subject: impl Into<String>, object: impl Into<String>) -> Self {
        Self {
            subject: subject.into(),
            object: object.into(),
            confidence: None,
        }
    }

    pub fn with_confidence(mut self, c: f64) -> Self {
        self.confidence = Some(c);
        self
    }
}

/// `extracted_kg` payload: entity names grouped by type and relation
/// mentions grouped by relation type.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionResult {
    #[serde(default)]
    pub entities: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub relations: BTreeMap<String, Vec<RelationMention>>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct EntityItem {
    pub etype: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct RelationItem {
    pub rel_type: String,
    pub subject: String,
    pub object: String,
}

/// Either kind of extracted item; the unit counted by F1 and density terms.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Item {
    Entity(EntityItem),
    Relation(RelationItem),
}

impl ExtractionResult {
    pub fn add_entity(&mut self, etype: &str, name: &str) -> &mut Self {
        self.entities
            .entry(etype.to_string())
            .or_default()
            .push(name.to_string());
        self
    }

    pub fn add_relation(&mut self, rel_type: &str, mention: RelationMention) -> &mut Self {
        self.relations.entry(rel_type.to_string()).or_default().push(mention);
        self
    }

    pub fn entity_items(&self) -> Vec<EntityItem> {
        self.entities
            .iter()
            .flat_map(|(t, names)| {
                names.iter().map(move |n| EntityItem {
                    etype: t.clone(),
                    name: n.clone(),
                })
            })
            .collect()
    }

    pub fn relation_items(&self) -> Vec<RelationItem> {
        self.relations
            .iter()
            .flat_map(|(t, ms)| {
                ms.iter().map(move |m| RelationItem {
                    rel_type: t.clone(),
                    subject: m.subject.clone(),
                    object: m.object.clone(),
                })
            })
            .collect()
    }

    pub fn items(&self) -> Vec<Item> {
        let mut out: Vec<Item> = self.entity_items().into_iter().map(Item::Entity).collect();
        out.extend(self.relation_items().into_iter().map(Item::Relation));
        out
    }

    pub fn entity_count(&self) -> usize {
        self.entities.values().map(Vec::len).sum()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.values().map(Vec::len).sum()
    }

    pub fn item_count(&self) -> usize {
        self.entity_count() + self.relation_count()
    }

    pub fn is_empty(&self) -> bool {
        self.item_count() == 0
    }

    /// Entity types that carry at least one name.
    pub fn covered_entity_types(&self) -> BTreeSet<&str> {
        self.entities
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, _)| k.as_str())
            .collect()
    }

    pub fn covered_relation_types(&self) -> BTreeSet<&str> {
        self.relations
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, _)| k.as_str())
            .collect()
    }

    /// Types under which `name` is listed, in type order.
    pub fn types_of(&self, name: &str) -> Vec<&str> {
        self.entities
            .iter()
            .filter(|(_, names)| names.iter().any(|n| n == name))
            .map(|(t, _)| t.as_str())
            .collect()
    }

    /// Set equality over entity and relation items (ignores confidences and
    /// list order).
    pub fn same_items(&self, other: &ExtractionResult) -> bool {
        let a: BTreeSet<Item> = self.items().into_iter().collect();
        let b: BTreeSet<Item> = other.items().into_iter().collect();
        a == b
    }

    /// Copy keeping only relations for which `keep` returns true.
    pub fn filter_relations<F>(&self, mut keep: F) -> ExtractionResult
    where
        F: FnMut(&str, &RelationMention) -> bool,
    {
        let mut out = ExtractionResult {
            entities: self.entities.clone(),
            relations: BTreeMap::new(),
        };
        for (t, ms) in &self.relations {
            let kept: Vec<_> = ms.iter().filter(|m| keep(t, m)).cloned().collect();
            if !kept.is_empty() {
                out.relations.insert(t.clone(), kept);
            }
        }
        out
    }
}
