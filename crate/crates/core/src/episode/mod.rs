//! Multi-round extraction episodes against a live store.
//!
//! The driver enforces the tool-ordering protocol: the density check must
//! follow every extraction, and storage is allowed only after
//! disambiguation of the current extraction. Offending actions are rejected
//! (no effect, failed tool-call reward) and recorded. Storage routes the
//! extraction's relations through the update operator: accepted edges are
//! upserted, the rest are staged for later promotion.

mod agent;
mod corpus;
mod experiment;

use std::collections::{BTreeMap, BTreeSet};

use chrono::Duration;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use agent::{Action, AgentScript, Behavior, Observation, Policy};
pub use corpus::{default_schema, generate_corpus, SyntheticDocument};
pub use experiment::{run_experiment, AgentReport, AlphaUpdate, EpisodeSummary, ExperimentReport, GraphStats};

use crate::extraction::{ExtractionResult, Schema};
use crate::metrics::SpectralParams;
use crate::reward::{
    environmental_reward, result_reward, toolcall_reward, trajectory_reward, EnvBreakdown, ResultBreakdown,
    RewardBreakdown, RewardConfig, RewardError, ToolCall, TrajectoryStep,
};
use crate::store::{
    age_days, entity_id, AgingPolicy, EntityRef, KnowledgeGraph, StageCandidate, StoreError, Timestamp,
};
use crate::tools::{dispatch, quality_score, ToolEnv, ToolError, ToolName};
use crate::update::{
    apply_update, EdgeCandidate, EdgeKey, EntityInfo, SearchMode, UpdateContext, UpdateError, UpdateParams,
    UpdateProblem,
};

pub const DEFAULT_MAX_STEPS: usize = 10;
pub const DEFAULT_BATCH_SIZE: usize = 8;
const STAGING_SOURCE: &str = "episode";

/// Result term of non-terminal steps.
const NO_RESULT: ResultBreakdown = ResultBreakdown {
    format: 0.0,
    accuracy: 0.0,
    density_penalty: 0.0,
    total: 0.0,
    gold_empty: false,
};

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Update(#[from] UpdateError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Tool(#[from] ToolError),
}

#[derive(Debug, Clone)]
pub struct EpisodeConfig {
    pub max_steps: usize,
    /// Reward weights; `reward.alpha` is the mixture weight used for the
    /// episode and `reward.gamma` the discount of the return.
    pub reward: RewardConfig,
    pub spectral: SpectralParams,
    pub update: UpdateParams,
    pub seed: u64,
    /// Clock of episode 0; episode `i` runs `i` days later.
    pub start: Timestamp,
    pub tau_conf: f64,
    pub tau_votes: u32,
    pub aging: AgingPolicy,
    /// Episodes per `alpha` update in experiments.
    pub batch_size: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_steps: DEFAULT_MAX_STEPS,
            reward: RewardConfig::default(),
            spectral: SpectralParams::default(),
            update: UpdateParams::default(),
            seed: 0,
            start: ToolEnv::fixed().now,
            tau_conf: crate::store::DEFAULT_TAU_CONF,
            tau_votes: crate::store::DEFAULT_TAU_VOTES,
            aging: AgingPolicy::default(),
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), EpisodeError> {
        if self.max_steps == 0 {
            return Err(EpisodeError::InvalidConfig("max_steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(EpisodeError::InvalidConfig("batch_size must be at least 1".into()));
        }
        self.reward.validate()?;
        self.update.validate()?;
        self.spectral
            .validate()
            .map_err(|e| EpisodeError::InvalidConfig(e.to_string()))
    }

    pub fn clock(&self, episode: i64) -> Timestamp {
        self.start + Duration::days(episode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSize {
    pub entities: usize,
    pub relations: usize,
}

impl GraphSize {
    fn of(kg: &KnowledgeGraph) -> Self {
        Self {
            entities: kg.entities.len(),
            relations: kg.relations.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ActionRecord {
    Extract {
        entities: usize,
        relations: usize,
        format_ok: bool,
    },
    CallTool {
        tool: ToolName,
    },
    Finish,
}

impl From<&Action> for ActionRecord {
    fn from(a: &Action) -> Self {
        match a {
            Action::Extract { extraction, format_ok } => Self::Extract {
                entities: extraction.entity_count(),
                relations: extraction.relation_count(),
                format_ok: *format_ok,
            },
            Action::CallTool { tool } => Self::CallTool { tool: *tool },
            Action::Finish => Self::Finish,
        }
    }
}

/// How the update operator split the relations of a stored extraction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateSummary {
    pub candidates: usize,
    /// New edges written directly.
    pub accepted: usize,
    /// Mentions of edges already stored (always upserted).
    pub reobserved: usize,
    /// New edges sent to staging: rejected by the operator or below the
    /// promotion confidence.
    pub staged: usize,
    /// Mentions whose endpoints could not be resolved; left to the store.
    pub unresolved: usize,
    /// Stored edges the operator would drop; removal is not applied within
    /// an episode.
    pub removals_ignored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub action: ActionRecord,
    pub accepted: bool,
    /// Protocol rule the step broke, if any.
    pub violation: Option<String>,
    pub tool_error: Option<String>,
    pub request_digest: Option<String>,
    pub response_digest: Option<String>,
    pub reward: RewardBreakdown,
    pub env_terms: EnvBreakdown,
    /// Quality score of the working extraction after the step.
    pub quality: f64,
    pub graph_before: GraphSize,
    pub graph_after: GraphSize,
    pub gate: Option<GateSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub agent: String,
    pub doc_id: String,
    pub episode: i64,
    pub alpha: f64,
    pub gamma: f64,
    pub steps: Vec<StepRecord>,
    pub stored: bool,
    pub protocol_ok: bool,
    /// `sum_t gamma^t * mixed_t`.
    pub discounted_return: f64,
}

impl EpisodeTrace {
    pub fn env_sum(&self) -> f64 {
        self.steps.iter().map(|s| s.reward.env).sum()
    }

    pub fn task_sum(&self) -> f64 {
        self.steps.iter().map(|s| s.reward.task_total).sum()
    }

    pub fn mixed_sum(&self) -> f64 {
        self.steps.iter().map(|s| s.reward.mixed).sum()
    }

    /// Actions of accepted steps, in order.
    pub fn accepted_actions(&self) -> Vec<&ActionRecord> {
        self.steps.iter().filter(|s| s.accepted).map(|s| &s.action).collect()
    }

    /// Ordering rules over accepted steps: each extraction is immediately
    /// followed by a density check, and each storage call is preceded by a
    /// disambiguation call since the latest extraction.
    pub fn ordering_ok(&self) -> bool {
        let acts = self.accepted_actions();
        let mut disambiguated = false;
        for (i, a) in acts.iter().enumerate() {
            match a {
                ActionRecord::Extract { .. } => {
                    disambiguated = false;
                    let next = acts.get(i + 1);
                    if !matches!(
                        next,
                        Some(ActionRecord::CallTool {
                            tool: ToolName::ExtractionDensity
                        })
                    ) {
                        return false;
                    }
                }
                ActionRecord::CallTool {
                    tool: ToolName::EntityDisambiguation,
                } => disambiguated = true,
                ActionRecord::CallTool {
                    tool: ToolName::KgStorage,
                } if !disambiguated => return false,
                _ => {}
            }
        }
        true
    }
}

pub fn digest(v: &Value) -> String {
    let bytes = serde_json::to_vec(v).expect("JSON values serialize");
    let d = Sha256::digest(&bytes);
    d.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Relations of `x` resolved to store keys: types listed in the extraction
/// win, then any stored entity with the name.
fn resolve(store: &KnowledgeGraph, x: &ExtractionResult, name: &str) -> Option<EntityRef> {
    if let Some(t) = x.types_of(name).first() {
        return Some(EntityRef::new(t, name));
    }
    store
        .entities
        .values()
        .find(|e| e.name == name)
        .map(|e| EntityRef::new(&e.etype, &e.name))
}

struct Gated {
    upsert: ExtractionResult,
    staged: Vec<StageCandidate>,
    summary: GateSummary,
}

/// Split the relations of `x` between upsert and staging.
///
/// The update operator is solved over the stored edges touching the
/// extraction. A new edge is written directly only when the operator keeps
/// it and its confidence reaches the promotion threshold; every other new
/// edge is staged to collect votes. Mentions of stored edges are always
/// written, which refreshes them.
fn gate(
    store: &KnowledgeGraph,
    x: &ExtractionResult,
    schema: &Schema,
    p: &UpdateParams,
    tau_conf: f64,
    now: Timestamp,
) -> Result<Gated, EpisodeError> {
    let mut summary = GateSummary::default();
    let key_of = |rel: &str, s: &str, o: &str| -> Option<(EntityRef, EntityRef, EdgeKey)> {
        let (a, b) = (resolve(store, x, s)?, resolve(store, x, o)?);
        let k = EdgeKey::new(a.id(), b.id(), rel);
        Some((a, b, k))
    };
    let mut candidates = Vec::new();
    let mut local: BTreeSet<String> = x.entity_items().iter().map(|e| entity_id(&e.etype, &e.name)).collect();
    for (rel, ms) in &x.relations {
        for m in ms {
            let c = m.confidence.unwrap_or(1.0);
            match key_of(rel, &m.subject, &m.object) {
                Some((_, _, k)) if (0.0..=1.0).contains(&c) => {
                    local.insert(k.src_id.clone());
                    local.insert(k.dst_id.clone());
                    candidates.push(EdgeCandidate { key: k, confidence: c });
                }
                _ => summary.unresolved += 1,
            }
        }
    }
    summary.candidates = candidates.len();
    let current: BTreeSet<EdgeKey> = store
        .relations
        .keys()
        .filter(|k| local.contains(&k.src_id) || local.contains(&k.dst_id))
        .cloned()
        .collect();
    let ages: BTreeMap<EdgeKey, f64> = current
        .iter()
        .map(|k| (k.clone(), age_days(store.relations[k].last_seen, now).max(0) as f64))
        .collect();
    let mut ctx = UpdateContext::from_graph(store, Some(schema.clone()));
    for e in x.entity_items() {
        ctx.entities.entry(entity_id(&e.etype, &e.name)).or_insert(EntityInfo {
            name: e.name.clone(),
            etype: e.etype.clone(),
        });
    }
    let problem = UpdateProblem {
        current,
        candidates,
        ages,
        ctx,
    };
    let outcome = apply_update(&problem, p, SearchMode::Greedy)?;
    summary.removals_ignored = problem.current.difference(&outcome.graph).count();

    let mut staged = Vec::new();
    let upsert = x.filter_relations(|rel, m| {
        let Some((a, b, k)) = key_of(rel, &m.subject, &m.object) else {
            return true;
        };
        let c = m.confidence.unwrap_or(1.0);
        if !(0.0..=1.0).contains(&c) {
            return true;
        }
        if problem.current.contains(&k) {
            summary.reobserved += 1;
            true
        } else if outcome.graph.contains(&k) && c >= tau_conf {
            summary.accepted += 1;
            true
        } else {
            summary.staged += 1;
            staged.push(StageCandidate {
                src: a,
                dst: b,
                rel_type: rel.to_string(),
                confidence: c,
                source: STAGING_SOURCE.into(),
            });
            false
        }
    });
    Ok(Gated {
        upsert,
        staged,
        summary,
    })
}

/// Environment term of a step that left the store untouched: the coverage
/// and entropy gains vanish and temporal consistency is exactly one.
fn idle_env(penalty: f64, cfg: &RewardConfig) -> EnvBreakdown {
    EnvBreakdown {
        coverage_gain: 0.0,
        entropy_gain: 0.0,
        penalty,
        temporal: 1.0,
        total: -cfg.lambda_contr * penalty - cfg.lambda_t,
    }
}

fn store_penalty(store: &KnowledgeGraph, p: &UpdateParams) -> f64 {
    let edges: BTreeSet<EdgeKey> = store.relations.keys().cloned().collect();
    p.constraints.penalty(&edges, &UpdateContext::from_graph(store, None))
}

#[derive(Default)]
struct ProtocolState {
    working: Option<ExtractionResult>,
    history: Vec<ExtractionResult>,
    format_ok: bool,
    attempts: u32,
    version: u32,
    density_pending: bool,
    needs_more: Option<bool>,
    disambiguated: bool,
    stored: bool,
}

impl ProtocolState {
    /// Why `action` at `step` is not allowed now, if it is not.
    fn check(&self, action: &Action, step: usize, max_steps: usize) -> Option<&'static str> {
        match action {
            Action::Extract { .. } if self.density_pending => Some("density check pending"),
            Action::Extract { .. } if step + 1 == max_steps => Some("no step left for the density check"),
            Action::Extract { .. } => None,
            Action::CallTool { tool } if self.density_pending && *tool != ToolName::ExtractionDensity => {
                Some("density check pending")
            }
            Action::CallTool { .. } if self.working.is_none() => Some("no extraction yet"),
            Action::CallTool {
                tool: ToolName::KgStorage,
            } if !self.disambiguated => Some("storage before disambiguation"),
            Action::CallTool { .. } => None,
            Action::Finish if self.density_pending => Some("density check pending"),
            Action::Finish => None,
        }
    }

    fn payload(&self, tool: ToolName, doc: &SyntheticDocument) -> Value {
        let x = self.working.as_ref().expect("checked by the protocol");
        let schema = serde_json::to_value(&doc.schema).expect("schema serializes");
        match tool {
            ToolName::ExtractionDensity | ToolName::CoverageFeedback | ToolName::QualityMetrics => {
                json!({"text": doc.text, "schema": schema, "extracted_kg": x})
            }
            ToolName::IterativeFeedback => json!({
                "extraction_history": self.history,
                "extracted_kg": x,
                "text": doc.text,
                "schema": schema,
            }),
            ToolName::EntityDisambiguation => json!({"extracted_kg": x, "disambiguation_strategy": "exact_match"}),
            ToolName::KgStorage => json!({"extracted_kg": x}),
        }
    }
}

/// Run one episode of `agent` on `doc`, mutating `store` through storage
/// calls. The mixture weight is `cfg.reward.alpha`.
pub fn run_episode(
    agent: &dyn Policy,
    doc: &SyntheticDocument,
    store: &mut KnowledgeGraph,
    cfg: &EpisodeConfig,
    episode: i64,
) -> Result<EpisodeTrace, EpisodeError> {
    cfg.validate()?;
    let rc = &cfg.reward;
    let alpha = rc.alpha;
    let now = cfg.clock(episode);
    let env = ToolEnv {
        now,
        measure_time: false,
        database: "memory".into(),
    };
    let previous_episode = store.current_episode.replace(episode);

    let mut st = ProtocolState::default();
    let mut calls: Vec<ToolCall> = Vec::new();
    let mut traj: Vec<TrajectoryStep> = Vec::new();
    let mut steps = Vec::new();
    let mut idle_penalty: Option<f64> = None;
    let mut quality = 0.0;
    let mut discounted = 0.0;
    let mut weight = 1.0;

    for t in 0..cfg.max_steps {
        let action = agent.act(&Observation {
            doc,
            step: t,
            attempts: st.attempts,
            working: st.working.as_ref(),
            density_pending: st.density_pending,
            needs_more: st.needs_more,
            disambiguated: st.disambiguated,
            stored: st.stored,
        });
        let before = GraphSize::of(store);
        let toolcall_before = toolcall_reward(&calls, &rc.toolcall);
        let query_key = format!("{}#{}", doc.doc_id, st.version);
        let violation = st.check(&action, t, cfg.max_steps);
        let mut tool_error = None;
        let mut request_digest = None;
        let mut response_digest = None;
        let mut env_terms = None;
        let mut gate_summary = None;
        let mut finished = false;
        let mut flagged = None;

        if let Some(v) = violation {
            let tool = match &action {
                Action::CallTool { tool } => tool.as_str(),
                Action::Extract { .. } => "extract",
                Action::Finish => "finish",
            };
            calls.push(ToolCall::new(tool, &query_key, false));
            flagged = Some(v.to_string());
        } else {
            match &action {
                Action::Extract { extraction, format_ok } => {
                    request_digest = Some(digest(
                        &serde_json::to_value(extraction).expect("extraction serializes"),
                    ));
                    if let Some(prev) = st.working.replace(extraction.clone()) {
                        st.history.push(prev);
                    }
                    st.format_ok = *format_ok;
                    st.attempts += 1;
                    st.version += 1;
                    st.density_pending = true;
                    st.needs_more = None;
                    st.disambiguated = false;
                    quality = quality_score(extraction, &doc.schema, &doc.text);
                }
                Action::CallTool { tool } => {
                    let mut payload = st.payload(*tool, doc);
                    let result = if *tool == ToolName::KgStorage {
                        let x = st.working.as_ref().expect("checked");
                        let g = gate(store, x, &doc.schema, &cfg.update, cfg.tau_conf, now)?;
                        payload = json!({"extracted_kg": g.upsert});
                        let prev = store.clone();
                        let r = dispatch(*tool, &payload, Ok(store), &env);
                        if r.is_ok() {
                            store.stage_candidates(&g.staged, episode, now);
                            env_terms = Some(environmental_reward(
                                &prev,
                                store,
                                &cfg.spectral,
                                &cfg.update.constraints,
                                rc,
                            ));
                            idle_penalty = None;
                        }
                        gate_summary = Some(g.summary);
                        r
                    } else {
                        dispatch(*tool, &payload, Ok(store), &env)
                    };
                    request_digest = Some(digest(&payload));
                    match result {
                        Ok(resp) => {
                            response_digest = Some(digest(&resp));
                            match tool {
                                ToolName::ExtractionDensity => {
                                    st.density_pending = false;
                                    st.needs_more = resp["needs_more_extraction"].as_bool();
                                }
                                ToolName::EntityDisambiguation => st.disambiguated = true,
                                ToolName::KgStorage => {
                                    st.stored = resp["storage_status"]["overall_success"].as_bool() == Some(true);
                                }
                                _ => {}
                            }
                            calls.push(ToolCall::new(tool.as_str(), &query_key, true));
                        }
                        Err(e) if !e.is_client_error() && !matches!(e, ToolError::Storage(_)) => return Err(e.into()),
                        Err(e) => {
                            tool_error = Some(e.to_string());
                            calls.push(ToolCall::new(tool.as_str(), &query_key, false));
                        }
                    }
                }
                Action::Finish => {
                    finished = true;
                    if st.needs_more == Some(false) && !st.stored {
                        flagged = Some("finished without storing an adequate extraction".into());
                    }
                }
            }
        }

        let env_terms = match env_terms {
            Some(e) => e,
            None => {
                let pen = *idle_penalty.get_or_insert_with(|| store_penalty(store, &cfg.update));
                idle_env(pen, rc)
            }
        };
        // marginal change of the capped running total
        let toolcall = toolcall_reward(&calls, &rc.toolcall) - toolcall_before;
        traj.push(TrajectoryStep {
            protocol_ok: flagged.is_none(),
            quality,
        });
        let terminal = st.stored || finished || t + 1 == cfg.max_steps;
        let (result, trajectory) = if terminal {
            let empty = ExtractionResult::default();
            let pred = st.working.as_ref().unwrap_or(&empty);
            let format_ok = st.working.is_some() && st.format_ok;
            (
                result_reward(pred, &doc.gold, format_ok, &rc.result),
                trajectory_reward(&traj, st.stored, &rc.trajectory),
            )
        } else {
            (NO_RESULT, 0.0)
        };
        let reward = RewardBreakdown::compose(env_terms.total, toolcall, result, trajectory, alpha)?;
        discounted += weight * reward.mixed;
        weight *= rc.gamma;
        steps.push(StepRecord {
            index: t,
            action: ActionRecord::from(&action),
            accepted: violation.is_none(),
            violation: flagged,
            tool_error,
            request_digest,
            response_digest,
            reward,
            env_terms,
            quality,
            graph_before: before,
            graph_after: GraphSize::of(store),
            gate: gate_summary,
        });
        if terminal {
            break;
        }
    }

    store.current_episode = previous_episode;
    let protocol_ok = steps.iter().all(|s| s.violation.is_none());
    Ok(EpisodeTrace {
        agent: agent.name().to_string(),
        doc_id: doc.doc_id.clone(),
        episode,
        alpha,
        gamma: rc.gamma,
        steps,
        stored: st.stored,
        protocol_ok,
        discounted_return: discounted,
    })
}
