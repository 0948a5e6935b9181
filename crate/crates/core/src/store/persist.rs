//! Line-delimited JSON persistence.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Entity, KnowledgeGraph, Relation, SnapshotRecord, StagedRelation, StoreError};

/// Environment variable naming the persistence file.
pub const DB_PATH_ENV: &str = "KGR_DB_PATH";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Record {
    Entity(Entity),
    Relation(Relation),
    Staged(StagedRelation),
    Snapshot(SnapshotRecord),
}

pub fn db_path_from_env() -> Option<PathBuf> {
    std::env::var_os(DB_PATH_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

impl KnowledgeGraph {
    pub fn records(&self) -> impl Iterator<Item = Record> + '_ {
        self.entities
            .values()
            .cloned()
            .map(Record::Entity)
            .chain(self.relations.values().cloned().map(Record::Relation))
            .chain(self.staged.values().cloned().map(Record::Staged))
            .chain(self.snapshots.iter().cloned().map(Record::Snapshot))
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), StoreError> {
        for rec in self.records() {
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Rebuild a store from JSONL; blank lines are ignored. The schema and
    /// current episode are not persisted.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, StoreError> {
        let mut kg = KnowledgeGraph::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record =
                serde_json::from_str(&line).map_err(|source| StoreError::Parse { line: i + 1, source })?;
            match rec {
                Record::Entity(e) => {
                    kg.entities.insert(e.id.clone(), e);
                }
                Record::Relation(r) => {
                    kg.relations.insert(r.key(), r);
                }
                Record::Staged(p) => {
                    kg.staged.insert(p.key(), p);
                }
                Record::Snapshot(s) => kg.snapshots.push(s),
            }
        }
        Ok(kg)
    }
}

pub fn save_jsonl(kg: &KnowledgeGraph, path: &Path) -> Result<(), StoreError> {
    let tmp = path.with_extension("jsonl.tmp");
    kg.write_jsonl(BufWriter::new(File::create(&tmp)?))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Load a store; a missing file yields an empty store.
pub fn load_jsonl(path: &Path) -> Result<KnowledgeGraph, StoreError> {
    match File::open(path) {
        Ok(f) => KnowledgeGraph::read_jsonl(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(KnowledgeGraph::new()),
        Err(e) => Err(e.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::{ExtractionResult, RelationMention};
    use crate::store::{EntityRef, StageCandidate};
    use chrono::{TimeZone, Utc};

    #[test]
    fn roundtrip() {
        let now = Utc.with_ymd_and_hms(2025, 3, 4, 5, 6, 7).unwrap();
        let mut kg = KnowledgeGraph::new();
        kg.current_episode = Some(3);
        let mut d = ExtractionResult::default();
        d.add_entity("P", "a").add_entity("P", "b");
        d.add_relation("r", RelationMention::new("a", "b").with_confidence(0.25));
        kg.upsert_extraction(&d, "doc", now);
        kg.stage_candidates(
            &[StageCandidate {
                src: EntityRef::new("P", "a"),
                dst: EntityRef::new("P", "c"),
                rel_type: "r".into(),
                confidence: 0.3,
                source: "doc".into(),
            }],
            3,
            now,
        );
        kg.create_snapshot("s1", "note", now).unwrap();
        let mut buf = Vec::new();
        kg.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().next().unwrap().contains("\"kind\":\"entity\""));
        assert!(text.contains("2025-03-04T05:06:07Z"));
        let back = KnowledgeGraph::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back.entities, kg.entities);
        assert_eq!(back.relations, kg.relations);
        assert_eq!(back.staged, kg.staged);
        assert_eq!(back.snapshots, kg.snapshots);
    }

    #[test]
    fn bad_line_reports_position() {
        let err = KnowledgeGraph::read_jsonl(&b"\n{\"kind\":\"nope\"}\n"[..]).unwrap_err();
        assert!(matches!(err, StoreError::Parse { line: 2, .. }));
    }
}
