//! Budgeted coverage maximization over candidate edges.

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use super::{EdgeCandidate, SearchMode, UpdateError};
use crate::metrics::{coverage, GraphView};

/// Largest number of size-k subsets the exhaustive search will scan.
pub const MAX_COVER_SUBSETS: u128 = 1_000_000;

pub fn max_cover_subsets() -> u128 {
    MAX_COVER_SUBSETS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverSelection {
    /// Selected candidates in selection order.
    pub selected: Vec<EdgeCandidate>,
    /// Coverage increase over the base graph (averaged when several bases
    /// are given).
    pub gain: f64,
    /// Coverage evaluations performed.
    pub evaluations: usize,
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k.min(n));
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Bases padded with every candidate endpoint, plus the candidate edges as
/// index pairs into each padded base.
struct Prepared {
    bases: Vec<PaddedBase>,
}

/// Padded graph, its coverage and the candidate index pairs.
type PaddedBase = (GraphView, f64, Vec<(usize, usize)>);

impl Prepared {
    fn new(bases: &[GraphView], cands: &[EdgeCandidate], kappa: f64, h: usize) -> Self {
        let ids: Vec<String> = cands
            .iter()
            .flat_map(|c| [c.key.src_id.clone(), c.key.dst_id.clone()])
            .collect();
        let bases = bases
            .iter()
            .map(|b| {
                let g = b.padded_to(&ids);
                let pairs = cands
                    .iter()
                    .map(|c| {
                        let i = g.index_of(&c.key.src_id).expect("padded");
                        let j = g.index_of(&c.key.dst_id).expect("padded");
                        (i, j)
                    })
                    .collect();
                let base = coverage(&g, kappa, h);
                (g, base, pairs)
            })
            .collect();
        Self { bases }
    }

    /// Mean coverage gain of adding the candidates at `chosen`.
    fn gain(&self, chosen: &[usize], kappa: f64, h: usize) -> f64 {
        let total: f64 = self
            .bases
            .iter()
            .map(|(g, base, pairs)| {
                let mut a = g.clone();
                for &c in chosen {
                    let (i, j) = pairs[c];
                    a = a.with_edge(i, j);
                }
                coverage(&a, kappa, h) - base
            })
            .sum();
        total / self.bases.len() as f64
    }
}

/// Pick up to `k` candidates maximizing the coverage increase of `g`.
///
/// Greedy mode adds, `k` times, the candidate with the largest marginal
/// gain; ties go to the smallest edge key. Exhaustive mode scans every
/// subset of size at most `k` and returns the first optimum found, larger
/// subsets first. Asking for more than there are selects everything.
pub fn cover_select(
    g: &GraphView,
    cands: &[EdgeCandidate],
    k: usize,
    kappa: f64,
    h: usize,
    mode: SearchMode,
) -> Result<CoverSelection, UpdateError> {
    cover_select_expected(std::slice::from_ref(g), cands, k, kappa, h, mode)
}

/// As [`cover_select`], with gains averaged over several base graphs (for
/// instance subgraphs sampled from the retrieval distribution).
pub fn cover_select_expected(
    bases: &[GraphView],
    cands: &[EdgeCandidate],
    k: usize,
    kappa: f64,
    h: usize,
    mode: SearchMode,
) -> Result<CoverSelection, UpdateError> {
    if bases.is_empty() {
        return Err(UpdateError::InvalidParam("at least one base graph is required".into()));
    }
    if !(0.0..=1.0).contains(&kappa) {
        return Err(UpdateError::InvalidParam(format!(
            "kappa must lie in [0, 1], got {kappa}"
        )));
    }
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| cands[a].key.cmp(&cands[b].key));
    let k = k.min(cands.len());
    let prep = Prepared::new(bases, cands, kappa, h);
    let mut evaluations = 0;

    let chosen: Vec<usize> = match mode {
        SearchMode::Greedy => {
            let mut chosen: Vec<usize> = Vec::with_capacity(k);
            for _ in 0..k {
                let mut best: Option<(usize, f64)> = None;
                for &c in order.iter().filter(|c| !chosen.contains(c)) {
                    let mut trial = chosen.clone();
                    trial.push(c);
                    let v = prep.gain(&trial, kappa, h);
                    evaluations += 1;
                    if best.is_none_or(|(_, b)| v > b) {
                        best = Some((c, v));
                    }
                }
                let (c, _) = best.expect("k is capped by the candidate count");
                chosen.push(c);
            }
            chosen
        }
        SearchMode::Exhaustive => {
            let count = binomial(cands.len(), k);
            if count > MAX_COVER_SUBSETS {
                return Err(UpdateError::TooManySubsets(count));
            }
            // coverage is monotone, so full-size subsets are scanned first
            let mut best: Option<(Vec<usize>, f64)> = None;
            for size in (1..=k).rev() {
                for subset in order.iter().copied().combinations(size) {
                    let v = prep.gain(&subset, kappa, h);
                    evaluations += 1;
                    if best.as_ref().is_none_or(|(_, b)| v > *b) {
                        best = Some((subset, v));
                    }
                }
            }
            best.map(|b| b.0).unwrap_or_default()
        }
    };
    let gain = if chosen.is_empty() {
        0.0
    } else {
        prep.gain(&chosen, kappa, h)
    };
    Ok(CoverSelection {
        selected: chosen.iter().map(|&c| cands[c].clone()).collect(),
        gain,
        evaluations,
    })
}
