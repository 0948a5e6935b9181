use std::collections::{BTreeMap, BTreeSet};

use kgr_core::update::{
    apply_update, update_objective, ConstraintSet, EdgeCandidate, EdgeKey, SearchMode, UpdateParams, UpdateProblem,
};
use proptest::prelude::*;

const NODES: [&str; 4] = ["a", "b", "c", "d"];

fn key(s: usize, d: usize, r: usize) -> EdgeKey {
    EdgeKey::new(NODES[s], NODES[d], ["rel", "alt"][r])
}

fn edge() -> impl Strategy<Value = EdgeKey> {
    (0..NODES.len(), 0..NODES.len(), 0..2usize).prop_map(|(s, d, r)| key(s, d, r))
}

/// Small problems (at most ten toggleable edges) that include self-loops so
/// the default constraints have something to penalize.
fn problem() -> impl Strategy<Value = UpdateProblem> {
    (
        prop::collection::btree_map(edge(), 0.0..60.0f64, 0..5),
        prop::collection::btree_map(edge(), 0.0..=1.0f64, 0..6),
    )
        .prop_map(|(current, cands)| UpdateProblem {
            current: current.keys().cloned().collect(),
            candidates: cands
                .iter()
                .map(|(k, &c)| EdgeCandidate {
                    key: k.clone(),
                    confidence: c,
                })
                .collect(),
            ages: current,
            ..UpdateProblem::default()
        })
}

fn params() -> impl Strategy<Value = UpdateParams> {
    (0.0..2.0f64, 0.0..1.0f64, 0.0..0.5f64, 0.01..3.0f64, 0.0..=1.0f64).prop_map(
        |(kappa_s, tau, xi, lambda_contr, accept_threshold)| UpdateParams {
            kappa_s,
            tau,
            xi,
            lambda_contr,
            accept_threshold,
            ..UpdateParams::default()
        },
    )
}

fn toggled(g: &BTreeSet<EdgeKey>, e: &EdgeKey) -> BTreeSet<EdgeKey> {
    let mut h = g.clone();
    if !h.remove(e) {
        h.insert(e.clone());
    }
    h
}

proptest! {
    #[test]
    fn exhaustive_result_has_no_improving_toggle(prob in problem(), p in params()) {
        let out = apply_update(&prob, &p, SearchMode::Exhaustive).unwrap();
        for e in prob.toggleable() {
            let alt = update_objective(&toggled(&out.graph, &e), &prob, &p).unwrap().total;
            prop_assert!(alt <= out.objective() + 1e-12, "toggling {e:?} gives {alt} > {}", out.objective());
        }
    }

    #[test]
    fn violations_strictly_lower_the_objective(prob in problem(), p in params(), pick in any::<prop::sample::Index>()) {
        let edges = prob.toggleable();
        prop_assume!(!edges.is_empty());
        let g: BTreeSet<EdgeKey> = edges.iter().take(pick.index(edges.len()) + 1).cloned().collect();
        let constrained = update_objective(&g, &prob, &p).unwrap();
        let free = update_objective(&g, &prob, &UpdateParams { constraints: ConstraintSet::none(), ..p.clone() }).unwrap();
        prop_assert_eq!(constrained.smoothness, free.smoothness);
        prop_assert_eq!(constrained.confidence, free.confidence);
        if constrained.penalty > 0.0 {
            prop_assert!(constrained.total < free.total);
        } else {
            prop_assert_eq!(constrained.total, free.total);
        }
    }

    #[test]
    fn updates_are_deterministic(prob in problem(), p in params(), greedy in any::<bool>()) {
        let mode = if greedy { SearchMode::Greedy } else { SearchMode::Exhaustive };
        let a = apply_update(&prob, &p, mode).unwrap();
        let b = apply_update(&prob, &p, mode).unwrap();
        prop_assert_eq!(&a, &b);

        // Candidate order is not part of the input's meaning.
        let mut reversed = prob.clone();
        reversed.candidates.reverse();
        let c = apply_update(&reversed, &p, mode).unwrap();
        prop_assert_eq!(&a.graph, &c.graph);
        prop_assert_eq!(a.objective(), c.objective());
    }
}

#[test]
fn a_self_loop_is_penalized() {
    let loop_edge = key(0, 0, 0);
    let prob = UpdateProblem {
        candidates: vec![EdgeCandidate {
            key: loop_edge.clone(),
            confidence: 0.9,
        }],
        ages: BTreeMap::new(),
        ..UpdateProblem::default()
    };
    let g = BTreeSet::from([loop_edge]);
    let terms = update_objective(&g, &prob, &UpdateParams::default()).unwrap();
    assert!(terms.penalty > 0.0);
}
