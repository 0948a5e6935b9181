//! Embedded knowledge-graph store.
//!
//! Entities are keyed by a stable id derived from `(etype, name)`, promoted
//! relations by `(src_id, dst_id, rel_type)`. Low-confidence candidates live
//! in a separate staging table until they collect enough votes; the staging
//! table is never visible to metrics or retrieval.

mod cypher;
mod persist;
mod validate;

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::extraction::{ExtractionResult, Schema};

pub use cypher::{export_cypher, sanitize_label};
pub use persist::{db_path_from_env, load_jsonl, save_jsonl, Record, DB_PATH_ENV};
pub use validate::{validate_graph, Violation};

pub type Timestamp = DateTime<Utc>;

pub const DEFAULT_TAU_CONF: f64 = 0.72;
pub const DEFAULT_TAU_VOTES: u32 = 3;
pub const DEFAULT_SOFT_WINDOW_DAYS: i64 = 7;
pub const DEFAULT_HARD_WINDOW_DAYS: i64 = 45;
pub const DEFAULT_DECAY_RATE: f64 = 0.08;

const SECS_PER_DAY: i64 = 86_400;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("snapshot exists: {0}")]
    SnapshotExists(String),
    #[error("soft window ({soft}) must be smaller than hard window ({hard})")]
    InvalidWindows { soft: i64, hard: i64 },
    #[error("decay rate must be finite and non-negative, got {0}")]
    InvalidDecayRate(f64),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed record on line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

/// Stable entity id: `e_` followed by the first 16 hex digits of
/// sha256(etype, 0x1f, name).
pub fn entity_id(etype: &str, name: &str) -> String {
    let mut h = Sha256::new();
    h.update(etype.as_bytes());
    h.update([0x1f]);
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut out = String::with_capacity(18);
    out.push_str("e_");
    for b in digest.iter().take(8) {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub name: String,
    pub etype: String,
    pub created_at: Timestamp,
    pub last_seen: Timestamp,
    pub source: String,
    #[serde(default)]
    pub episode_tag: Option<i64>,
    #[serde(default)]
    pub snapshot: Option<String>,
}

impl Entity {
    pub fn new(etype: &str, name: &str, source: &str, now: Timestamp) -> Self {
        Self {
            id: entity_id(etype, name),
            name: name.to_string(),
            etype: etype.to_string(),
            created_at: now,
            last_seen: now,
            source: source.to_string(),
            episode_tag: None,
            snapshot: None,
        }
    }
}

/// Unique key of a promoted or staged relation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationKey {
    pub src_id: String,
    pub dst_id: String,
    pub rel_type: String,
}

impl RelationKey {
    pub fn new(src_id: impl Into<String>, dst_id: impl Into<String>, rel_type: impl Into<String>) -> Self {
        Self {
            src_id: src_id.into(),
            dst_id: dst_id.into(),
            rel_type: rel_type.into(),
        }
    }

    pub fn is_self_loop(&self) -> bool {
        self.src_id == self.dst_id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relation {
    pub src_id: String,
    pub dst_id: String,
    pub rel_type: String,
    pub confidence: f64,
    pub evidence: Vec<String>,
    pub created_at: Timestamp,
    pub last_seen: Timestamp,
    #[serde(default)]
    pub episode_tag: Option<i64>,
    #[serde(default)]
    pub snapshot: Option<String>,
}

impl Relation {
    pub fn key(&self) -> RelationKey {
        RelationKey::new(&self.src_id, &self.dst_id, &self.rel_type)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagedRelation {
    pub src_id: String,
    pub dst_id: String,
    pub rel_type: String,
    pub confidence: f64,
    pub votes: u32,
    pub sources: Vec<String>,
    #[serde(default)]
    pub episode_tag: Option<i64>,
    pub created_at: Timestamp,
    pub last_seen: Timestamp,
}

impl StagedRelation {
    pub fn key(&self) -> RelationKey {
        RelationKey::new(&self.src_id, &self.dst_id, &self.rel_type)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub tag: String,
    pub timestamp: Timestamp,
    pub note: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCounts {
    pub stored: usize,
    pub skipped: usize,
    pub failed: usize,
}

impl KindCounts {
    pub fn total(&self) -> usize {
        self.stored + self.skipped + self.failed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemKind {
    Entity,
    Relation,
}

pub const REASON_ORPHAN: &str = "orphaned reference";
pub const REASON_SCHEMA: &str = "schema violation";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpsertFailure {
    pub kind: ItemKind,
    pub item: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpsertReport {
    pub entities: KindCounts,
    pub relations: KindCounts,
    pub failures: Vec<UpsertFailure>,
}

/// Endpoint reference in a staging candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRef {
    pub name: String,
    pub etype: String,
}

impl EntityRef {
    pub fn new(etype: &str, name: &str) -> Self {
        Self {
            name: name.to_string(),
            etype: etype.to_string(),
        }
    }

    pub fn id(&self) -> String {
        entity_id(&self.etype, &self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCandidate {
    pub src: EntityRef,
    pub dst: EntityRef,
    pub rel_type: String,
    pub confidence: f64,
    pub source: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagingReport {
    pub new_rows: usize,
    pub votes_added: usize,
    pub rejected: usize,
    pub entities_created: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromotionReport {
    pub promoted_new: usize,
    pub merged: usize,
    pub remaining: usize,
}

impl PromotionReport {
    pub fn promoted(&self) -> usize {
        self.promoted_new + self.merged
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgingReport {
    pub decayed: usize,
    pub deleted: usize,
    pub untouched: usize,
}

/// Aging windows and rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgingPolicy {
    pub soft_window_days: i64,
    pub hard_window_days: i64,
    pub decay_rate: f64,
}

impl Default for AgingPolicy {
    fn default() -> Self {
        Self {
            soft_window_days: DEFAULT_SOFT_WINDOW_DAYS,
            hard_window_days: DEFAULT_HARD_WINDOW_DAYS,
            decay_rate: DEFAULT_DECAY_RATE,
        }
    }
}

/// Whole days elapsed from `then` to `now` (floored).
pub fn age_days(then: Timestamp, now: Timestamp) -> i64 {
    (now - then).num_seconds().div_euclid(SECS_PER_DAY)
}

fn push_unique(list: &mut Vec<String>, items: &[String]) {
    for it in items {
        if !list.contains(it) {
            list.push(it.clone());
        }
    }
}

/// The knowledge-graph state. Maps are ordered so iteration, persistence and
/// exports are deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeGraph {
    pub schema: Option<Schema>,
    pub entities: BTreeMap<String, Entity>,
    pub relations: BTreeMap<RelationKey, Relation>,
    pub staged: BTreeMap<RelationKey, StagedRelation>,
    pub snapshots: Vec<SnapshotRecord>,
    /// Episode tag written onto items touched by upserts and staging.
    pub current_episode: Option<i64>,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_schema(schema: Schema) -> Self {
        Self {
            schema: Some(schema),
            ..Self::default()
        }
    }

    pub fn entity(&self, etype: &str, name: &str) -> Option<&Entity> {
        self.entities.get(&entity_id(etype, name))
    }

    /// Entities carrying `name`, in id order.
    pub fn entities_named(&self, name: &str) -> Vec<&Entity> {
        self.entities.values().filter(|e| e.name == name).collect()
    }

    pub fn entities_of_type(&self, etype: &str) -> Vec<&Entity> {
        self.entities.values().filter(|e| e.etype == etype).collect()
    }

    /// Relations incident to the entity with id `id`.
    pub fn relations_of(&self, id: &str) -> Vec<&Relation> {
        self.relations
            .values()
            .filter(|r| r.src_id == id || r.dst_id == id)
            .collect()
    }

    fn entity_type_ok(&self, etype: &str) -> bool {
        self.schema.as_ref().is_none_or(|s| s.has_entity_type(etype))
    }

    fn relation_type_ok(&self, rel_type: &str) -> bool {
        self.schema.as_ref().is_none_or(|s| s.has_relation_type(rel_type))
    }

    fn selfloop_ok(&self, rel_type: &str) -> bool {
        self.schema.as_ref().is_some_and(|s| s.selfloop_allowed(rel_type))
    }

    /// Merge one entity; returns `true` when it was newly created.
    fn merge_entity(&mut self, etype: &str, name: &str, source: &str, now: Timestamp) -> bool {
        let id = entity_id(etype, name);
        let episode = self.current_episode;
        match self.entities.get_mut(&id) {
            Some(e) => {
                if now > e.last_seen {
                    e.last_seen = now;
                }
                if episode.is_some() {
                    e.episode_tag = episode;
                }
                false
            }
            None => {
                let mut e = Entity::new(etype, name, source, now);
                e.episode_tag = episode;
                self.entities.insert(id, e);
                true
            }
        }
    }

    /// Resolve a relation endpoint by name: types listed for the name in the
    /// delta take priority, then any stored entity with that name.
    fn resolve_endpoint(&self, delta: &ExtractionResult, name: &str) -> Option<String> {
        for t in delta.types_of(name) {
            let id = entity_id(t, name);
            if self.entities.contains_key(&id) {
                return Some(id);
            }
        }
        self.entities.values().find(|e| e.name == name).map(|e| e.id.clone())
    }

    /// Batched merge of an extraction into the store.
    ///
    /// Entities are processed first so relations in the same delta can refer
    /// to them. Every input item lands in exactly one of stored / skipped /
    /// failed.
    pub fn upsert_extraction(&mut self, delta: &ExtractionResult, source: &str, now: Timestamp) -> UpsertReport {
        let mut report = UpsertReport::default();

        for (etype, names) in &delta.entities {
            for name in names {
                if name.trim().is_empty() || !self.entity_type_ok(etype) {
                    report.entities.failed += 1;
                    report.failures.push(UpsertFailure {
                        kind: ItemKind::Entity,
                        item: format!("{etype}:{name}"),
                        reason: REASON_SCHEMA.into(),
                    });
                    continue;
                }
                if self.merge_entity(etype, name, source, now) {
                    report.entities.stored += 1;
                } else {
                    report.entities.skipped += 1;
                }
            }
        }

        for (rel_type, mentions) in &delta.relations {
            for m in mentions {
                let label = format!("{}-[{rel_type}]->{}", m.subject, m.object);
                let fail = |report: &mut UpsertReport, reason: &str| {
                    report.relations.failed += 1;
                    report.failures.push(UpsertFailure {
                        kind: ItemKind::Relation,
                        item: label.clone(),
                        reason: reason.into(),
                    });
                };
                let conf = m.confidence.unwrap_or(1.0);
                if !self.relation_type_ok(rel_type)
                    || !(0.0..=1.0).contains(&conf)
                    || m.subject.trim().is_empty()
                    || m.object.trim().is_empty()
                {
                    fail(&mut report, REASON_SCHEMA);
                    continue;
                }
                let (Some(src), Some(dst)) = (
                    self.resolve_endpoint(delta, &m.subject),
                    self.resolve_endpoint(delta, &m.object),
                ) else {
                    fail(&mut report, REASON_ORPHAN);
                    continue;
                };
                if src == dst && !self.selfloop_ok(rel_type) {
                    fail(&mut report, REASON_SCHEMA);
                    continue;
                }
                let key = RelationKey::new(src, dst, rel_type.as_str());
                let episode = self.current_episode;
                let evidence = vec![source.to_string()];
                match self.relations.get_mut(&key) {
                    Some(r) => {
                        r.confidence = r.confidence.max(conf);
                        if now > r.last_seen {
                            r.last_seen = now;
                        }
                        push_unique(&mut r.evidence, &evidence);
                        if episode.is_some() {
                            r.episode_tag = episode;
                        }
                        report.relations.skipped += 1;
                    }
                    None => {
                        self.relations.insert(
                            key.clone(),
                            Relation {
                                src_id: key.src_id,
                                dst_id: key.dst_id,
                                rel_type: key.rel_type,
                                confidence: conf,
                                evidence,
                                created_at: now,
                                last_seen: now,
                                episode_tag: episode,
                                snapshot: None,
                            },
                        );
                        report.relations.stored += 1;
                    }
                }
            }
        }
        report
    }

    /// Stage relation candidates, auto-creating missing endpoints.
    pub fn stage_candidates(&mut self, cands: &[StageCandidate], episode: i64, now: Timestamp) -> StagingReport {
        let mut report = StagingReport::default();
        for c in cands {
            if !(0.0..=1.0).contains(&c.confidence) || c.confidence.is_nan() {
                report.rejected += 1;
                continue;
            }
            for ep in [&c.src, &c.dst] {
                if self.merge_entity(&ep.etype, &ep.name, &c.source, now) {
                    report.entities_created += 1;
                }
            }
            let key = RelationKey::new(c.src.id(), c.dst.id(), c.rel_type.as_str());
            match self.staged.get_mut(&key) {
                Some(p) => {
                    p.votes += 1;
                    p.confidence = p.confidence.max(c.confidence);
                    p.sources.push(c.source.clone());
                    if now > p.last_seen {
                        p.last_seen = now;
                    }
                    report.votes_added += 1;
                }
                None => {
                    self.staged.insert(
                        key.clone(),
                        StagedRelation {
                            src_id: key.src_id,
                            dst_id: key.dst_id,
                            rel_type: key.rel_type,
                            confidence: c.confidence,
                            votes: 1,
                            sources: vec![c.source.clone()],
                            episode_tag: Some(episode),
                            created_at: now,
                            last_seen: now,
                        },
                    );
                    report.new_rows += 1;
                }
            }
        }
        report
    }

    /// Move staged rows with `confidence >= tau_conf` and `votes >= tau_votes`
    /// into the promoted relation set.
    pub fn promote_staged(&mut self, tau_conf: f64, tau_votes: u32, now: Timestamp) -> PromotionReport {
        let mut report = PromotionReport::default();
        let ready: Vec<RelationKey> = self
            .staged
            .values()
            .filter(|p| p.confidence >= tau_conf && p.votes >= tau_votes)
            .map(StagedRelation::key)
            .collect();
        for key in ready {
            let Some(p) = self.staged.remove(&key) else { continue };
            match self.relations.get_mut(&key) {
                Some(r) => {
                    if now > r.last_seen {
                        r.last_seen = now;
                    }
                    r.confidence = r.confidence.max(p.confidence);
                    push_unique(&mut r.evidence, &p.sources);
                    report.merged += 1;
                }
                None => {
                    let mut evidence = Vec::new();
                    push_unique(&mut evidence, &p.sources);
                    self.relations.insert(
                        key,
                        Relation {
                            src_id: p.src_id,
                            dst_id: p.dst_id,
                            rel_type: p.rel_type,
                            confidence: p.confidence,
                            evidence,
                            created_at: p.created_at,
                            last_seen: p.last_seen,
                            episode_tag: p.episode_tag,
                            snapshot: None,
                        },
                    );
                    report.promoted_new += 1;
                }
            }
        }
        report.remaining = self.staged.len();
        report
    }

    /// Decay relations idle for more than the soft window and delete those
    /// idle beyond the hard window.
    pub fn apply_aging(&mut self, now: Timestamp, policy: AgingPolicy) -> Result<AgingReport, StoreError> {
        let AgingPolicy {
            soft_window_days: soft,
            hard_window_days: hard,
            decay_rate,
        } = policy;
        if soft >= hard {
            return Err(StoreError::InvalidWindows { soft, hard });
        }
        if !decay_rate.is_finite() || decay_rate < 0.0 {
            return Err(StoreError::InvalidDecayRate(decay_rate));
        }
        let mut report = AgingReport::default();
        self.relations.retain(|_, r| {
            let days = age_days(r.last_seen, now);
            if days > hard {
                report.deleted += 1;
                false
            } else if days > soft {
                r.confidence *= (-decay_rate * (days - soft) as f64).exp();
                report.decayed += 1;
                true
            } else {
                report.untouched += 1;
                true
            }
        });
        Ok(report)
    }

    /// Record a snapshot and label every item carrying the current episode
    /// tag with it.
    pub fn create_snapshot(&mut self, tag: &str, note: &str, now: Timestamp) -> Result<SnapshotRecord, StoreError> {
        if self.snapshots.iter().any(|s| s.tag == tag) {
            return Err(StoreError::SnapshotExists(tag.to_string()));
        }
        if let Some(ep) = self.current_episode {
            for e in self.entities.values_mut().filter(|e| e.episode_tag == Some(ep)) {
                e.snapshot = Some(tag.to_string());
            }
            for r in self.relations.values_mut().filter(|r| r.episode_tag == Some(ep)) {
                r.snapshot = Some(tag.to_string());
            }
        }
        let rec = SnapshotRecord {
            tag: tag.to_string(),
            timestamp: now,
            note: note.to_string(),
        };
        self.snapshots.push(rec.clone());
        Ok(rec)
    }

    pub fn entity_count_for_episode(&self, ep: i64) -> usize {
        self.entities.values().filter(|e| e.episode_tag == Some(ep)).count()
    }

    pub fn relation_count_for_episode(&self, ep: i64) -> usize {
        self.relations.values().filter(|r| r.episode_tag == Some(ep)).count()
    }

    /// Ids referenced by promoted relations that are missing from the
    /// entity table.
    pub fn orphan_ids(&self) -> BTreeSet<&str> {
        self.relations
            .values()
            .flat_map(|r| [r.src_id.as_str(), r.dst_id.as_str()])
            .filter(|id| !self.entities.contains_key(*id))
            .collect()
    }
}
