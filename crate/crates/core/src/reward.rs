//! Reward components: tool-call, result, trajectory and environment terms,
//! their convex mixture, and the projected update of the mixing weight.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::{ExtractionResult, Item};
use crate::metrics::{coverage, temporal_consistency, von_neumann_entropy, GraphView, SpectralParams};
use crate::store::KnowledgeGraph;
use crate::update::{ConstraintSet, EdgeKey, UpdateContext};

/// Tolerance for the internal sum checks of a [`RewardBreakdown`].
pub const RECONCILE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("alpha must lie in [0, 1], got {0}")]
    AlphaOutOfRange(f64),
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
    #[error("breakdown does not reconcile: {0}")]
    Unreconciled(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolcallConfig {
    pub success: f64,
    pub failure: f64,
    pub cap: f64,
    /// Factor applied per repeat of the same tool and query.
    pub redundancy_decay: f64,
}

impl Default for ToolcallConfig {
    fn default() -> Self {
        Self {
            success: 0.05,
            failure: -0.1,
            cap: 0.5,
            redundancy_decay: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResultConfig {
    /// Magnitude of the format term (+ when well formed, - otherwise).
    pub format: f64,
    pub full_match: f64,
    pub over_rate: f64,
    pub under_rate: f64,
}

impl Default for ResultConfig {
    fn default() -> Self {
        Self {
            format: 1.0,
            full_match: 1.5,
            over_rate: 0.15,
            under_rate: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    /// Bonus when the tool ordering was respected, penalty otherwise.
    pub protocol: f64,
    /// Credit per step whose quality strictly improved.
    pub improvement: f64,
    pub storage: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            protocol: 0.2,
            improvement: 0.1,
            storage: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub lambda_contr: f64,
    pub lambda_t: f64,
    pub eta_alpha: f64,
    pub toolcall: ToolcallConfig,
    pub result: ResultConfig,
    pub trajectory: TrajectoryConfig,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            gamma: 0.95,
            lambda_contr: 1.0,
            lambda_t: 0.1,
            eta_alpha: 0.05,
            toolcall: ToolcallConfig::default(),
            result: ResultConfig::default(),
            trajectory: TrajectoryConfig::default(),
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        let bad = |m: &str| Err(RewardError::InvalidConfig(m.into()));
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(RewardError::AlphaOutOfRange(self.alpha));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.lambda_contr >= 0.0 && self.lambda_t >= 0.0) {
            return bad("lambda_contr and lambda_t must be >= 0");
        }
        if self.eta_alpha.is_nan() || self.eta_alpha <= 0.0 {
            return bad("eta_alpha must be > 0");
        }
        let d = self.toolcall.redundancy_decay;
        if !(d > 0.0 && d < 1.0) {
            return bad("redundancy_decay must lie in (0, 1)");
        }
        Ok(())
    }
}

/// One tool invocation as seen by the tool-call reward.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: String,
    /// Identifies the query the call served; repeats of (tool, key) decay.
    pub query_key: String,
    pub success: bool,
}

impl ToolCall {
    pub fn new(tool: &str, query_key: &str, success: bool) -> Self {
        Self {
            tool: tool.into(),
            query_key: query_key.into(),
            success,
        }
    }
}

/// Successes earn `success * decay^(k-1)` for the k-th call of the same
/// tool and query (failed calls count towards k); failures earn the
/// undecayed failure value. The sum is capped above.
pub fn toolcall_reward(calls: &[ToolCall], cfg: &ToolcallConfig) -> f64 {
    let mut seen: BTreeMap<(&str, &str), i32> = BTreeMap::new();
    let terms: Vec<f64> = calls
        .iter()
        .map(|c| {
            let k = seen.entry((c.tool.as_str(), c.query_key.as_str())).or_insert(0);
            let v = if c.success {
                cfg.success * cfg.redundancy_decay.powi(*k)
            } else {
                cfg.failure
            };
            *k += 1;
            v
        })
        .collect();
    exact_sum(&terms).min(cfg.cap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResultBreakdown {
    pub format: f64,
    pub accuracy: f64,
    pub density_penalty: f64,
    pub total: f64,
    /// Set when the gold extraction is empty and the density term was
    /// forced to zero.
    #[serde(skip)]
    pub gold_empty: bool,
}

fn multiset(r: &ExtractionResult) -> BTreeMap<Item, usize> {
    let mut m = BTreeMap::new();
    for it in r.items() {
        *m.entry(it).or_insert(0) += 1;
    }
    m
}

/// Micro F1 over entity and relation items, counting repeats.
pub fn extraction_f1(pred: &ExtractionResult, gold: &ExtractionResult) -> f64 {
    let p = multiset(pred);
    let g = multiset(gold);
    let np: usize = p.values().sum();
    let ng: usize = g.values().sum();
    if np + ng == 0 {
        return 1.0;
    }
    let hit: usize = p.iter().map(|(k, c)| (*c).min(g.get(k).copied().unwrap_or(0))).sum();
    2.0 * hit as f64 / (np + ng) as f64
}

/// Correctly rounded sum of `xs` (exact partial sums, rounded once), so
/// that e.g. three 0.05 rewards and one -0.1 add up to exactly 0.05.
pub fn exact_sum(xs: &[f64]) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for &x in xs {
        let mut x = x;
        let mut kept = 0;
        for i in 0..partials.len() {
            let mut y = partials[i];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }
    // round the exact value held in `partials` to the nearest double
    let Some(mut hi) = partials.pop() else { return 0.0 };
    let mut lo = 0.0;
    while let Some(y) = partials.pop() {
        let x = hi;
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    if let Some(&next) = partials.last() {
        if (lo < 0.0 && next < 0.0) || (lo > 0.0 && next > 0.0) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
    }
    hi
}

/// `||A| - |B|| / |B|` times the over- or under-generation rate.
pub fn density_penalty(pred_items: usize, gold_items: usize, cfg: &ResultConfig) -> f64 {
    if gold_items == 0 || pred_items == gold_items {
        return 0.0;
    }
    let rate = if pred_items > gold_items {
        cfg.over_rate
    } else {
        cfg.under_rate
    };
    pred_items.abs_diff(gold_items) as f64 / gold_items as f64 * rate
}

pub fn result_reward(
    pred: &ExtractionResult,
    gold: &ExtractionResult,
    format_ok: bool,
    cfg: &ResultConfig,
) -> ResultBreakdown {
    let format = if format_ok { cfg.format } else { -cfg.format };
    let accuracy = if pred.same_items(gold) {
        cfg.full_match
    } else {
        extraction_f1(pred, gold)
    };
    let density_penalty = density_penalty(pred.item_count(), gold.item_count(), cfg);
    ResultBreakdown {
        format,
        accuracy,
        density_penalty,
        total: exact_sum(&[format, accuracy, -density_penalty]),
        gold_empty: gold.item_count() == 0,
    }
}

/// What the trajectory reward needs from each step of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub protocol_ok: bool,
    /// Quality score of the working extraction after the step.
    pub quality: f64,
}

pub fn trajectory_reward(steps: &[TrajectoryStep], stored: bool, cfg: &TrajectoryConfig) -> f64 {
    let protocol = if steps.iter().all(|s| s.protocol_ok) {
        cfg.protocol
    } else {
        -cfg.protocol
    };
    let improved = steps.windows(2).filter(|w| w[1].quality > w[0].quality).count();
    let storage = if stored { cfg.storage } else { 0.0 };
    protocol + cfg.improvement * improved as f64 + storage
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvBreakdown {
    pub coverage_gain: f64,
    pub entropy_gain: f64,
    pub penalty: f64,
    pub temporal: f64,
    pub total: f64,
}

/// Environment term from two graph views (padded to a shared vertex set)
/// and the constraint penalty already evaluated on the newer graph.
pub fn environmental_reward_views(
    prev: &GraphView,
    next: &GraphView,
    penalty: f64,
    sp: &SpectralParams,
    cfg: &RewardConfig,
) -> EnvBreakdown {
    let a = prev.padded_to(next.ids());
    let b = next.padded_to(prev.ids());
    let coverage_gain = coverage(&b, sp.kappa, sp.h) - coverage(&a, sp.kappa, sp.h);
    let entropy_gain = if a.n() == 0 {
        0.0
    } else {
        von_neumann_entropy(&b, sp.mu) - von_neumann_entropy(&a, sp.mu)
    };
    let temporal = temporal_consistency(&a, &b, sp.beta_t);
    EnvBreakdown {
        coverage_gain,
        entropy_gain,
        penalty,
        temporal,
        total: coverage_gain + entropy_gain - cfg.lambda_contr * penalty - cfg.lambda_t * temporal,
    }
}

/// Environment term for a store transition; the penalty uses the stored
/// schema and the given constraint predicates.
pub fn environmental_reward(
    prev: &KnowledgeGraph,
    next: &KnowledgeGraph,
    sp: &SpectralParams,
    constraints: &ConstraintSet,
    cfg: &RewardConfig,
) -> EnvBreakdown {
    let edges: BTreeSet<EdgeKey> = next.relations.keys().cloned().collect();
    let ctx = UpdateContext::from_graph(next, None);
    let penalty = constraints.penalty(&edges, &ctx);
    environmental_reward_views(
        &GraphView::from_graph(prev),
        &GraphView::from_graph(next),
        penalty,
        sp,
        cfg,
    )
}

/// `alpha * env + (1 - alpha) * task`.
pub fn dual_reward(env: f64, task: f64, alpha: f64) -> Result<f64, RewardError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(RewardError::AlphaOutOfRange(alpha));
    }
    Ok(alpha * env + (1.0 - alpha) * task)
}

/// Projected step `clip(alpha + eta (grad_env - grad_task), 0, 1)`.
pub fn update_alpha(alpha: f64, grad_env: f64, grad_task: f64, eta_alpha: f64) -> f64 {
    let next = alpha + eta_alpha * (grad_env - grad_task);
    if next.is_nan() {
        return alpha.clamp(0.0, 1.0);
    }
    next.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub env: f64,
    pub toolcall: f64,
    pub result: ResultBreakdown,
    pub trajectory: f64,
    pub task_total: f64,
    pub mixed: f64,
    pub alpha_used: f64,
}

impl RewardBreakdown {
    pub fn compose(
        env: f64,
        toolcall: f64,
        result: ResultBreakdown,
        trajectory: f64,
        alpha: f64,
    ) -> Result<Self, RewardError> {
        let task_total = toolcall + result.total + trajectory;
        let b = Self {
            env,
            toolcall,
            result,
            trajectory,
            task_total,
            mixed: dual_reward(env, task_total, alpha)?,
            alpha_used: alpha,
        };
        b.check()?;
        Ok(b)
    }

    /// Verify the internal sums to [`RECONCILE_TOL`].
    pub fn check(&self) -> Result<(), RewardError> {
        let r = &self.result;
        let close = |a: f64, b: f64| (a - b).abs() <= RECONCILE_TOL;
        if !close(r.total, r.format + r.accuracy - r.density_penalty) {
            return Err(RewardError::Unreconciled("result total".into()));
        }
        if !close(self.task_total, self.toolcall + r.total + self.trajectory) {
            return Err(RewardError::Unreconciled("task total".into()));
        }
        let a = self.alpha_used;
        if !close(self.mixed, a * self.env + (1.0 - a) * self.task_total) {
            return Err(RewardError::Unreconciled("mixed".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::RelationMention;

    fn calls(spec: &[(&str, &str, bool)]) -> Vec<ToolCall> {
        spec.iter().map(|(t, q, s)| ToolCall::new(t, q, *s)).collect()
    }

    #[test]
    fn toolcall_examples() {
        let c = ToolcallConfig::default();
        let mixed = calls(&[("a", "1", true), ("b", "1", true), ("c", "1", true), ("d", "1", false)]);
        assert_eq!(toolcall_reward(&mixed, &c), 0.05);
        let many: Vec<_> = (0..20).map(|i| ToolCall::new(&format!("t{i}"), "q", true)).collect();
        assert_eq!(toolcall_reward(&many, &c), 0.5);
        let twice = calls(&[("a", "q", true), ("a", "q", true)]);
        assert_eq!(toolcall_reward(&twice, &c), 0.05 + 0.025);
    }

    fn ents(names: &[&str]) -> ExtractionResult {
        let mut r = ExtractionResult::default();
        for n in names {
            r.add_entity("T", n);
        }
        r
    }

    #[test]
    fn result_examples() {
        let c = ResultConfig::default();
        let mut gold = ents(&["a", "b"]);
        gold.add_relation("r", RelationMention::new("a", "b"));
        assert_eq!(result_reward(&gold, &gold, true, &c).total, 2.5);
        let r = result_reward(&ents(&["a", "b"]), &ents(&["b", "c"]), true, &c);
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.total, 1.5);
        assert_eq!(density_penalty(24, 20, &c), 0.03);
        assert_eq!(density_penalty(15, 20, &c), 0.25 * 0.8);
        let empty = result_reward(&ents(&["a"]), &ExtractionResult::default(), false, &c);
        assert!(empty.gold_empty);
        assert_eq!(empty.density_penalty, 0.0);
        assert_eq!(empty.format, -1.0);
    }

    #[test]
    fn exact_sum_rounds_once() {
        assert_eq!(exact_sum(&[0.05, 0.05, 0.05, -0.1]), 0.05);
        assert_eq!(exact_sum(&[1e100, 1.0, -1e100, 1e-100]), 1.0);
        assert_eq!(exact_sum(&[0.1; 10]), 1.0);
        assert_eq!(exact_sum(&[]), 0.0);
    }

    #[test]
    fn trajectory_examples() {
        let c = TrajectoryConfig::default();
        let ok = TrajectoryStep {
            protocol_ok: true,
            quality: 0.3,
        };
        assert!((trajectory_reward(&[ok], true, &c) - 0.4).abs() < 1e-15);
        let bad = TrajectoryStep {
            protocol_ok: false,
            quality: 0.9,
        };
        // one improvement, one violation, nothing stored
        assert!((trajectory_reward(&[ok, bad], false, &c) - (-0.2 + 0.1)).abs() < 1e-15);
    }

    #[test]
    fn mixture_and_alpha() {
        assert_eq!(dual_reward(2.0, -1.0, 1.0).unwrap(), 2.0);
        assert_eq!(dual_reward(2.0, -1.0, 0.0).unwrap(), -1.0);
        assert_eq!(dual_reward(2.0, -1.0, 0.5).unwrap(), 0.5);
        assert!(dual_reward(0.0, 0.0, 1.5).is_err());
        assert_eq!(update_alpha(0.9, 0.5, 0.0, 1.0), 1.0);
        assert_eq!(update_alpha(0.5, 0.3, 0.3, 1.0), 0.5);
        assert_eq!(update_alpha(0.1, 0.0, 1e308, 1e10), 0.0);
    }

    #[test]
    fn env_identity_transition() {
        let g = GraphView::from_edges(4, &[(0, 1), (1, 2)]);
        let cfg = RewardConfig::default();
        let e = environmental_reward_views(&g, &g, 0.0, &SpectralParams::default(), &cfg);
        assert_eq!(e.coverage_gain, 0.0);
        assert_eq!(e.entropy_gain, 0.0);
        assert_eq!(e.temporal, 1.0);
        assert_eq!(e.total, -cfg.lambda_t);
    }

    #[test]
    fn env_two_vertices() {
        let sp = SpectralParams::default();
        let cfg = RewardConfig {
            lambda_contr: 0.0,
            lambda_t: 0.0,
            ..Default::default()
        };
        let e = environmental_reward_views(
            &GraphView::empty(2),
            &GraphView::from_edges(2, &[(0, 1)]),
            0.0,
            &sp,
            &cfg,
        );
        // each vertex gains one neighbour
        assert!((e.coverage_gain - 2.0 * sp.kappa).abs() < 1e-15);
        let mu = sp.mu;
        let (p, q) = (mu / (2.0 + 2.0 * mu), (2.0 + mu) / (2.0 + 2.0 * mu));
        let s = -p * p.ln() - q * q.ln();
        assert!((e.entropy_gain - (s - 2f64.ln())).abs() < 1e-12);
        assert!((e.total - (e.coverage_gain + e.entropy_gain)).abs() < 1e-15);
    }

    #[test]
    fn breakdown_reconciles() {
        let r = result_reward(&ents(&["a"]), &ents(&["a"]), true, &ResultConfig::default());
        let b = RewardBreakdown::compose(0.3, 0.05, r, 0.4, 0.25).unwrap();
        assert!((b.task_total - 2.95).abs() < 1e-12);
        let json = serde_json::to_value(b).unwrap();
        let keys: Vec<&str> = json.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        assert_eq!(
            keys,
            [
                "alpha_used",
                "env",
                "mixed",
                "result",
                "task_total",
                "toolcall",
                "trajectory"
            ]
        );
        let rk: Vec<&str> = json["result"].as_object().unwrap().keys().map(|k| k.as_str()).collect();
        assert_eq!(rk, ["accuracy", "density_penalty", "format", "total"]);
        let mut broken = b;
        broken.mixed += 1e-9;
        assert!(broken.check().is_err());
    }
}
