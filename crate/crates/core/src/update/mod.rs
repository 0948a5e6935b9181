//! Constrained graph-update operator.
//!
//! A candidate graph `G` is scored against the current graph `G_t` and the
//! extracted candidates `E^` as
//!
//! ```text
//! S = exp(-kappa_s * d(G, G_t)) * prod_{e in E^ & G} c_e
//! C = sum_{e in E^ & G} c_e - tau * sum_{e in G \ E^} exp(-xi * age(e))
//! objective = S + C - lambda_contr * R_contr(G)
//! ```
//!
//! where `d` is the size of the symmetric difference of edge keys. The
//! feasible family is every subset of `G_t` union `E^`.

mod constraints;
mod contraction;
mod cover;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::RelationKey;

pub use constraints::{
    Constraint, ConstraintSet, DuplicateKeys, EntityInfo, ExclusiveRelations, SchemaTypes, SelfLoops, UpdateContext,
};
pub use contraction::{
    contraction_instances, estimate_update_contraction, ContractionInstance, ContractionReport, HistogramBin,
};
pub use cover::{cover_select, cover_select_expected, max_cover_subsets, CoverSelection};

/// Edges are identified by their relation key.
pub type EdgeKey = RelationKey;

pub const MAX_EXHAUSTIVE_EDGES: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UpdateError {
    #[error("infeasible graph: edge {0:?} is neither current nor a candidate")]
    Infeasible(EdgeKey),
    #[error("no age for current edge {0:?}")]
    MissingAge(EdgeKey),
    #[error("candidate confidence {confidence} for {key:?} outside [0, 1]")]
    InvalidConfidence { key: EdgeKey, confidence: f64 },
    #[error("{0} toggleable edges exceed the exhaustive limit of {MAX_EXHAUSTIVE_EDGES}")]
    TooManyEdges(usize),
    #[error("{0} subsets exceed the exhaustive limit")]
    TooManySubsets(u128),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeCandidate {
    pub key: EdgeKey,
    pub confidence: f64,
}

impl EdgeCandidate {
    pub fn new(src: &str, dst: &str, rel_type: &str, confidence: f64) -> Self {
        Self {
            key: EdgeKey::new(src, dst, rel_type),
            confidence,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    #[default]
    Greedy,
    Exhaustive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpdateParams {
    /// Sharpness of the smoothness term.
    pub kappa_s: f64,
    /// Weight of the retention penalty on non-candidate edges.
    pub tau: f64,
    /// Age sharpness of the retention penalty.
    pub xi: f64,
    pub lambda_contr: f64,
    /// Candidates at or above this confidence seed the greedy search.
    pub accept_threshold: f64,
    #[serde(skip, default)]
    pub constraints: ConstraintSet,
}

impl Default for UpdateParams {
    fn default() -> Self {
        Self {
            kappa_s: 0.5,
            tau: 0.1,
            xi: 0.1,
            lambda_contr: 1.0,
            accept_threshold: 0.5,
            constraints: ConstraintSet::default(),
        }
    }
}

impl UpdateParams {
    pub fn validate(&self) -> Result<(), UpdateError> {
        for (name, v) in [
            ("kappa_s", self.kappa_s),
            ("tau", self.tau),
            ("xi", self.xi),
            ("lambda_contr", self.lambda_contr),
        ] {
            if !(0.0..f64::INFINITY).contains(&v) {
                return Err(UpdateError::InvalidParam(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.accept_threshold) {
            return Err(UpdateError::InvalidParam("accept_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Current graph, candidates, edge ages (days) and constraint context.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateProblem {
    pub current: BTreeSet<EdgeKey>,
    pub candidates: Vec<EdgeCandidate>,
    pub ages: BTreeMap<EdgeKey, f64>,
    pub ctx: UpdateContext,
}

impl UpdateProblem {
    /// Candidate confidences by key; repeated keys keep the maximum.
    pub fn candidate_map(&self) -> Result<BTreeMap<&EdgeKey, f64>, UpdateError> {
        let mut m: BTreeMap<&EdgeKey, f64> = BTreeMap::new();
        for c in &self.candidates {
            if !(0.0..=1.0).contains(&c.confidence) {
                return Err(UpdateError::InvalidConfidence {
                    key: c.key.clone(),
                    confidence: c.confidence,
                });
            }
            let e = m.entry(&c.key).or_insert(c.confidence);
            *e = e.max(c.confidence);
        }
        Ok(m)
    }

    /// Sorted union of current edges and candidate keys.
    pub fn toggleable(&self) -> Vec<EdgeKey> {
        let mut all: BTreeSet<EdgeKey> = self.current.clone();
        all.extend(self.candidates.iter().map(|c| c.key.clone()));
        all.into_iter().collect()
    }
}

/// Size of the symmetric difference of two edge sets.
pub fn graph_distance(a: &BTreeSet<EdgeKey>, b: &BTreeSet<EdgeKey>) -> usize {
    a.symmetric_difference(b).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub smoothness: f64,
    pub confidence: f64,
    /// Sum of squared positive constraint slacks.
    pub penalty: f64,
    pub total: f64,
}

pub fn update_objective(
    g: &BTreeSet<EdgeKey>,
    problem: &UpdateProblem,
    p: &UpdateParams,
) -> Result<ObjectiveTerms, UpdateError> {
    let cands = problem.candidate_map()?;
    objective_with(g, problem, &cands, p)
}

fn objective_with(
    g: &BTreeSet<EdgeKey>,
    problem: &UpdateProblem,
    cands: &BTreeMap<&EdgeKey, f64>,
    p: &UpdateParams,
) -> Result<ObjectiveTerms, UpdateError> {
    let mut product = 1.0;
    let mut accepted = 0.0;
    let mut retention = 0.0;
    for e in g {
        match cands.get(e) {
            Some(&c) => {
                product *= c;
                accepted += c;
            }
            None if problem.current.contains(e) => {
                let age = problem.ages.get(e).ok_or_else(|| UpdateError::MissingAge(e.clone()))?;
                retention += (-p.xi * age).exp();
            }
            None => return Err(UpdateError::Infeasible(e.clone())),
        }
    }
    let d = graph_distance(g, &problem.current) as f64;
    let smoothness = (-p.kappa_s * d).exp() * product;
    let confidence = accepted - p.tau * retention;
    let penalty = p.constraints.penalty(g, &problem.ctx);
    Ok(ObjectiveTerms {
        smoothness,
        confidence,
        penalty,
        total: smoothness + confidence - p.lambda_contr * penalty,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutcome {
    pub graph: BTreeSet<EdgeKey>,
    pub terms: ObjectiveTerms,
    /// Objective evaluations performed.
    pub evaluations: usize,
}

impl UpdateOutcome {
    pub fn objective(&self) -> f64 {
        self.terms.total
    }
}

fn toggled(g: &BTreeSet<EdgeKey>, e: &EdgeKey) -> BTreeSet<EdgeKey> {
    let mut h = g.clone();
    if !h.remove(e) {
        h.insert(e.clone());
    }
    h
}

/// Maximize the objective over the feasible family.
///
/// Exhaustive mode scans every subset of the toggleable edges (subset masks
/// in increasing order, first maximum wins). Greedy mode starts from the
/// current graph plus candidates at or above `accept_threshold` and applies
/// the best strictly improving single-edge toggle until none remains; ties
/// go to the smallest edge key.
pub fn apply_update(problem: &UpdateProblem, p: &UpdateParams, mode: SearchMode) -> Result<UpdateOutcome, UpdateError> {
    p.validate()?;
    let cands = problem.candidate_map()?;
    for e in &problem.current {
        if !cands.contains_key(e) && !problem.ages.contains_key(e) {
            return Err(UpdateError::MissingAge(e.clone()));
        }
    }
    let edges = problem.toggleable();
    match mode {
        SearchMode::Exhaustive => {
            if edges.len() > MAX_EXHAUSTIVE_EDGES {
                return Err(UpdateError::TooManyEdges(edges.len()));
            }
            let mut best: Option<(BTreeSet<EdgeKey>, ObjectiveTerms)> = None;
            let total = 1usize << edges.len();
            for mask in 0..total {
                let g: BTreeSet<EdgeKey> = edges
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, e)| e.clone())
                    .collect();
                let t = objective_with(&g, problem, &cands, p)?;
                if best.as_ref().is_none_or(|(_, b)| t.total > b.total) {
                    best = Some((g, t));
                }
            }
            let (graph, terms) = best.expect("at least the empty subset is evaluated");
            Ok(UpdateOutcome {
                graph,
                terms,
                evaluations: total,
            })
        }
        SearchMode::Greedy => {
            let mut g = problem.current.clone();
            g.extend(
                cands
                    .iter()
                    .filter(|(_, &c)| c >= p.accept_threshold)
                    .map(|(k, _)| (*k).clone()),
            );
            let mut terms = objective_with(&g, problem, &cands, p)?;
            let mut evaluations = 1;
            loop {
                let mut best: Option<(BTreeSet<EdgeKey>, ObjectiveTerms)> = None;
                for e in &edges {
                    let h = toggled(&g, e);
                    let t = objective_with(&h, problem, &cands, p)?;
                    evaluations += 1;
                    let bar = best.as_ref().map_or(terms.total, |(_, b)| b.total);
                    if t.total > bar {
                        best = Some((h, t));
                    }
                }
                match best {
                    Some((h, t)) => {
                        g = h;
                        terms = t;
                    }
                    None => break,
                }
            }
            Ok(UpdateOutcome {
                graph: g,
                terms,
                evaluations,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(a: &str, b: &str) -> EdgeKey {
        EdgeKey::new(a, b, "r")
    }

    fn plain(kappa_s: f64, tau: f64) -> UpdateParams {
        UpdateParams {
            kappa_s,
            tau,
            xi: 0.2,
            lambda_contr: 0.0,
            constraints: ConstraintSet::none(),
            ..Default::default()
        }
    }

    #[test]
    fn distance_cases() {
        let a: BTreeSet<_> = [key("a", "b"), key("b", "c"), key("c", "d")].into();
        let b: BTreeSet<_> = [key("x", "y"), key("y", "z")].into();
        assert_eq!(graph_distance(&a, &a), 0);
        assert_eq!(graph_distance(&a, &b), 5);
    }

    #[test]
    fn objective_keep_current() {
        let current: BTreeSet<_> = [key("a", "b"), key("b", "c")].into();
        let ages = [(key("a", "b"), 1.0), (key("b", "c"), 4.0)].into();
        let prob = UpdateProblem {
            current: current.clone(),
            ages,
            ..Default::default()
        };
        let p = plain(0.7, 0.3);
        let t = update_objective(&current, &prob, &p).unwrap();
        let sum = (-0.2f64).exp() + (-0.8f64).exp();
        assert_eq!(t.smoothness, 1.0);
        assert!((t.confidence + 0.3 * sum).abs() < 1e-15);
        assert!((t.total - (1.0 - 0.3 * sum)).abs() < 1e-15);
    }

    #[test]
    fn objective_single_candidate() {
        let prob = UpdateProblem {
            candidates: vec![EdgeCandidate::new("a", "b", "r", 0.9)],
            ..Default::default()
        };
        let p = plain(1.3, 0.5);
        let g: BTreeSet<_> = [key("a", "b")].into();
        let t = update_objective(&g, &prob, &p).unwrap();
        assert!((t.total - 0.9 * (1.0 + (-1.3f64).exp())).abs() < 1e-15);
        let bad: BTreeSet<_> = [key("q", "z")].into();
        assert!(matches!(
            update_objective(&bad, &prob, &p),
            Err(UpdateError::Infeasible(_))
        ));
    }

    #[test]
    fn no_candidates_keeps_current() {
        let current: BTreeSet<_> = [key("a", "b"), key("b", "c")].into();
        let ages = current.iter().map(|k| (k.clone(), 3.0)).collect();
        let prob = UpdateProblem {
            current: current.clone(),
            ages,
            ..Default::default()
        };
        let p = plain(0.5, 0.0);
        for mode in [SearchMode::Greedy, SearchMode::Exhaustive] {
            assert_eq!(apply_update(&prob, &p, mode).unwrap().graph, current);
        }
    }

    #[test]
    fn improving_candidate_accepted() {
        let prob = UpdateProblem {
            candidates: vec![EdgeCandidate::new("a", "b", "r", 0.6)],
            ..Default::default()
        };
        // 0.6 (1 + exp(-0.1)) > 1; the high threshold makes greedy toggle it in
        let p = UpdateParams {
            accept_threshold: 0.9,
            ..plain(0.1, 0.0)
        };
        for mode in [SearchMode::Greedy, SearchMode::Exhaustive] {
            let out = apply_update(&prob, &p, mode).unwrap();
            assert!(out.graph.contains(&key("a", "b")), "{mode:?}");
        }
    }

    #[test]
    fn exhaustive_limit() {
        let candidates = (0..17)
            .map(|i| EdgeCandidate::new("a", &format!("n{i}"), "r", 0.5))
            .collect();
        let prob = UpdateProblem {
            candidates,
            ..Default::default()
        };
        assert_eq!(
            apply_update(&prob, &UpdateParams::default(), SearchMode::Exhaustive),
            Err(UpdateError::TooManyEdges(17))
        );
    }

    #[test]
    fn missing_age_rejected() {
        let prob = UpdateProblem {
            current: [key("a", "b")].into(),
            ..Default::default()
        };
        assert!(matches!(
            apply_update(&prob, &UpdateParams::default(), SearchMode::Greedy),
            Err(UpdateError::MissingAge(_))
        ));
    }
}
