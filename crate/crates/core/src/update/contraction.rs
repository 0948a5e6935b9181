//! Empirical contraction probe for the update operator.
//!
//! Random pairs of nearby graphs share one candidate list; the probe reports
//! the largest ratio `d(U(g), U(g')) / d(g, g')` seen. A diagnostic only.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    apply_update, graph_distance, EdgeCandidate, EdgeKey, SearchMode, UpdateError, UpdateParams, UpdateProblem,
};

const ENTITIES: usize = 5;
const UNIVERSE: usize = 8;
const BIN_WIDTH: f64 = 0.25;

/// One random pair of graphs with the candidates and ages they share.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionInstance {
    pub left: UpdateProblem,
    pub right: UpdateProblem,
}

impl ContractionInstance {
    pub fn distance(&self) -> usize {
        graph_distance(&self.left.current, &self.right.current)
    }
}

/// Seeded instances: 5 entities, a universe of at most 8 directed keys,
/// `g'` obtained from `g` by one to three random toggles (which may cancel),
/// candidate confidences uniform on [0, 1] and ages uniform on [0, 30) days.
pub fn contraction_instances(trials: usize, seed: u64) -> Vec<ContractionInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs: Vec<(usize, usize)> = (0..ENTITIES)
        .flat_map(|i| (0..ENTITIES).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    (0..trials)
        .map(|_| {
            pairs.shuffle(&mut rng);
            let universe: Vec<EdgeKey> = pairs[..UNIVERSE]
                .iter()
                .map(|(i, j)| EdgeKey::new(format!("n{i}"), format!("n{j}"), "r"))
                .collect();
            let g: BTreeSet<EdgeKey> = universe.iter().filter(|_| rng.random_bool(0.5)).cloned().collect();
            let mut g2 = g.clone();
            for _ in 0..rng.random_range(1..=3) {
                let e = universe.choose(&mut rng).expect("non-empty universe");
                if !g2.remove(e) {
                    g2.insert(e.clone());
                }
            }
            let mut candidates = Vec::new();
            for k in &universe {
                if rng.random_bool(0.4) {
                    candidates.push(EdgeCandidate {
                        key: k.clone(),
                        confidence: rng.random::<f64>(),
                    });
                }
            }
            let ages: BTreeMap<EdgeKey, f64> = universe
                .iter()
                .map(|k| (k.clone(), rng.random::<f64>() * 30.0))
                .collect();
            let problem = |current: BTreeSet<EdgeKey>| UpdateProblem {
                current,
                candidates: candidates.clone(),
                ages: ages.clone(),
                ctx: Default::default(),
            };
            ContractionInstance {
                left: problem(g),
                right: problem(g2),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    /// Largest observed ratio; `None` when no pair had positive distance.
    pub kappa_hat: Option<f64>,
    pub ratios: Vec<f64>,
    pub histogram: Vec<HistogramBin>,
    pub pairs_evaluated: usize,
    /// Pairs skipped because the two graphs coincided.
    pub pairs_skipped: usize,
}

impl ContractionReport {
    pub fn from_ratios(ratios: Vec<f64>, pairs_skipped: usize) -> Self {
        let kappa_hat = ratios.iter().copied().reduce(f64::max);
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for r in &ratios {
            *counts.entry((r / BIN_WIDTH).floor() as usize).or_default() += 1;
        }
        let histogram = counts
            .into_iter()
            .map(|(b, count)| HistogramBin {
                lo: b as f64 * BIN_WIDTH,
                hi: (b + 1) as f64 * BIN_WIDTH,
                count,
            })
            .collect();
        Self {
            kappa_hat,
            pairs_evaluated: ratios.len(),
            ratios,
            histogram,
            pairs_skipped,
        }
    }
}

impl fmt::Display for ContractionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kappa_hat {
            None => writeln!(f, "kappa_hat: no data")?,
            Some(k) => writeln!(f, "kappa_hat: {k:.6}")?,
        }
        writeln!(
            f,
            "pairs: {} evaluated, {} skipped",
            self.pairs_evaluated, self.pairs_skipped
        )?;
        for b in &self.histogram {
            writeln!(f, "  [{:.2}, {:.2}): {}", b.lo, b.hi, b.count)?;
        }
        Ok(())
    }
}

/// Solve both sides of every instance exactly and collect distance ratios.
pub fn estimate_update_contraction(
    p: &UpdateParams,
    trials: usize,
    seed: u64,
) -> Result<ContractionReport, UpdateError> {
    let mut ratios = Vec::new();
    let mut skipped = 0;
    for inst in contraction_instances(trials, seed) {
        let d = inst.distance();
        if d == 0 {
            skipped += 1;
            continue;
        }
        let a = apply_update(&inst.left, p, SearchMode::Exhaustive)?;
        let b = apply_update(&inst.right, p, SearchMode::Exhaustive)?;
        ratios.push(graph_distance(&a.graph, &b.graph) as f64 / d as f64);
    }
    Ok(ContractionReport::from_ratios(ratios, skipped))
}
