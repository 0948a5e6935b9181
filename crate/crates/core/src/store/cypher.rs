//! Cypher script export.
//!
//! The script recreates the uniqueness constraints and indexes, then MERGEs
//! every entity, promoted relation, staged relation and snapshot node with
//! literal parameters. Running it twice against the same database is safe.

use std::fmt::Write as _;

use super::{KnowledgeGraph, Timestamp};

const CONSTRAINTS: &str = "\
CREATE CONSTRAINT entity_global_id IF NOT EXISTS
FOR (n:Entity) REQUIRE n.id IS UNIQUE;
CREATE CONSTRAINT entity_name_type_unique IF NOT EXISTS
FOR (n:Entity) REQUIRE (n.name, n.type) IS UNIQUE;
CREATE INDEX entity_type IF NOT EXISTS
FOR (n:Entity) ON (n.type);
CREATE INDEX entity_name IF NOT EXISTS
FOR (n:Entity) ON (n.name);
CREATE INDEX entity_name_lower IF NOT EXISTS
FOR (n:Entity) ON (toLower(n.name));
CREATE CONSTRAINT rel_key IF NOT EXISTS
FOR ()-[r:REL]-() REQUIRE (r.src_id, r.dst_id, r.rel_type) IS UNIQUE;
CREATE CONSTRAINT tool_rel_uniqueness IF NOT EXISTS
FOR ()-[r:RELATIONSHIP]-() REQUIRE (r.type, r.subject, r.object) IS UNIQUE;
CREATE INDEX rel_last_seen IF NOT EXISTS
FOR ()-[r:REL]-() ON (r.last_seen);
CREATE INDEX tool_rel_last_seen IF NOT EXISTS
FOR ()-[r:RELATIONSHIP]-() ON (r.last_seen);
";

/// Replace every character outside `[A-Za-z0-9_]` with `_`; a leading digit
/// (or an empty name) gets a `_` prefix so the label is a valid identifier.
pub fn sanitize_label(t: &str) -> String {
    let mut s: String = t
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect();
    if s.is_empty() || s.starts_with(|c: char| c.is_ascii_digit()) {
        s.insert(0, '_');
    }
    s
}

fn lit(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn ts(t: &Timestamp) -> String {
    format!(
        "datetime({})",
        lit(&t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
    )
}

fn list(items: &[String]) -> String {
    let parts: Vec<String> = items.iter().map(|s| lit(s)).collect();
    format!("[{}]", parts.join(", "))
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt_int(x: Option<i64>) -> String {
    x.map_or("null".into(), |v| v.to_string())
}

fn opt_str(x: &Option<String>) -> String {
    x.as_deref().map_or("null".into(), lit)
}

pub fn export_cypher(kg: &KnowledgeGraph) -> String {
    let mut out = String::from(CONSTRAINTS);
    out.push('\n');
    for e in kg.entities.values() {
        let _ = writeln!(
            out,
            "MERGE (n:Entity {{id: {}}}) ON CREATE SET n.name = {}, n.type = {}, n.created_at = {}, n.source = {} \
SET n:{}, n.last_seen = {}, n.episode_tag = {}, n.snapshot = {};",
            lit(&e.id),
            lit(&e.name),
            lit(&e.etype),
            ts(&e.created_at),
            lit(&e.source),
            sanitize_label(&e.etype),
            ts(&e.last_seen),
            opt_int(e.episode_tag),
            opt_str(&e.snapshot),
        );
    }
    for r in kg.relations.values() {
        let _ = writeln!(
            out,
            "MATCH (s:Entity {{id: {}}}), (o:Entity {{id: {}}}) \
MERGE (s)-[r:REL {{src_id: {}, dst_id: {}, rel_type: {}}}]->(o) ON CREATE SET r.created_at = {} \
SET r.last_seen = {}, r.confidence = {}, r.evidence = {}, r.episode_tag = {}, r.snapshot = {};",
            lit(&r.src_id),
            lit(&r.dst_id),
            lit(&r.src_id),
            lit(&r.dst_id),
            lit(&r.rel_type),
            ts(&r.created_at),
            ts(&r.last_seen),
            num(r.confidence),
            list(&r.evidence),
            opt_int(r.episode_tag),
            opt_str(&r.snapshot),
        );
    }
    for p in kg.staged.values() {
        let _ = writeln!(
            out,
            "MATCH (s:Entity {{id: {}}}), (o:Entity {{id: {}}}) \
MERGE (s)-[p:PENDING_REL {{src_id: {}, dst_id: {}, rel_type: {}}}]->(o) ON CREATE SET p.created_at = {} \
SET p.last_seen = {}, p.confidence = {}, p.votes = {}, p.sources = {}, p.episode_tag = {};",
            lit(&p.src_id),
            lit(&p.dst_id),
            lit(&p.src_id),
            lit(&p.dst_id),
            lit(&p.rel_type),
            ts(&p.created_at),
            ts(&p.last_seen),
            num(p.confidence),
            p.votes,
            list(&p.sources),
            opt_int(p.episode_tag),
        );
    }
    for s in &kg.snapshots {
        let _ = writeln!(
            out,
            "MERGE (ss:GraphSnapshot {{sid: {}}}) ON CREATE SET ss.created_at = {}, ss.note = {};",
            lit(&s.tag),
            ts(&s.timestamp),
            lit(&s.note),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::{ExtractionResult, RelationMention};
    use chrono::{TimeZone, Utc};

    #[test]
    fn labels_are_sanitized() {
        assert_eq!(sanitize_label("Network Element"), "Network_Element");
        assert_eq!(sanitize_label("5G-Cell"), "_5G_Cell");
        assert_eq!(sanitize_label(""), "_");
    }

    #[test]
    fn literals_are_escaped() {
        assert_eq!(lit(r#"a"b\c"#), r#""a\"b\\c""#);
    }

    #[test]
    fn script_contains_constraints_and_merges() {
        let now = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap();
        let mut kg = KnowledgeGraph::new();
        let mut d = ExtractionResult::default();
        d.add_entity("Net Elem", "x\"y").add_entity("Net Elem", "z");
        d.add_relation("links", RelationMention::new("x\"y", "z"));
        kg.upsert_extraction(&d, "doc", now);
        kg.create_snapshot("s1", "n", now).unwrap();
        let s = export_cypher(&kg);
        assert!(s.contains("REQUIRE (n.name, n.type) IS UNIQUE"));
        assert!(s.contains("SET n:Net_Elem"));
        assert!(s.contains(r#"n.name = "x\"y""#));
        assert!(s.contains("[r:REL {src_id:"));
        assert!(s.contains("r.confidence = 1.0"));
        assert!(s.contains("GraphSnapshot {sid: \"s1\"}"));
        assert_eq!(s.matches("MERGE (n:Entity").count(), 2);
    }
}
