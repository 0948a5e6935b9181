//! Monte Carlo estimation of the retrieval partition function.
//!
//! Proposals are uniform over connected edge subsets: drawn directly from
//! the enumerated family when it fits under the cap, otherwise from a
//! Metropolis walk whose stationary law is uniform. Samples are then
//! resampled in proportion to `exp(beta * score)`.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    edge_adjacency, enumerate_connected_subgraphs, is_connected_set, log_sum_exp, score_edge_set, EdgeSet,
    EmbeddingSpace, RetrievalError, RetrievalParams, TextEncoder,
};
use crate::metrics::GraphView;
use crate::store::KnowledgeGraph;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Proposal {
    /// Enumerate when possible, walk otherwise.
    #[default]
    Auto,
    Enumerated,
    Walk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    /// Resampled subgraphs (edge positions into the graph's edge list).
    pub samples: Vec<EdgeSet>,
    /// `(1/M) sum exp(beta * score)` over the proposals.
    pub z_hat: f64,
    /// The raw proposals and their scores.
    pub proposals: Vec<EdgeSet>,
    pub proposal_scores: Vec<f64>,
    /// Effective sample size of the importance weights.
    pub ess: f64,
    pub proposal: Proposal,
}

/// Metropolis walk over connected edge subsets with at most `max_size` edges.
struct SubsetWalk {
    adj: Vec<Vec<usize>>,
    n_edges: usize,
    max_size: usize,
}

enum Move {
    Add(usize),
    Remove(usize),
    Jump(usize),
}

impl SubsetWalk {
    fn moves(&self, s: &[usize]) -> Vec<Move> {
        let mut out = Vec::new();
        if s.len() < self.max_size {
            let mut frontier: Vec<usize> = s
                .iter()
                .flat_map(|&e| self.adj[e].iter().copied())
                .filter(|f| s.binary_search(f).is_err())
                .collect();
            frontier.sort_unstable();
            frontier.dedup();
            out.extend(frontier.into_iter().map(Move::Add));
        }
        if s.len() > 1 {
            for (i, &e) in s.iter().enumerate() {
                let mut rest = s.to_vec();
                rest.remove(i);
                if is_connected_set(&rest, &self.adj) {
                    out.push(Move::Remove(e));
                }
            }
        } else {
            // singletons may jump anywhere, so the walk crosses components
            out.extend((0..self.n_edges).filter(|&f| f != s[0]).map(Move::Jump));
        }
        out
    }

    fn apply(s: &[usize], m: &Move) -> Vec<usize> {
        match *m {
            Move::Add(f) => {
                let mut t = s.to_vec();
                let pos = t.binary_search(&f).unwrap_err();
                t.insert(pos, f);
                t
            }
            Move::Remove(e) => s.iter().copied().filter(|&x| x != e).collect(),
            Move::Jump(f) => vec![f],
        }
    }

    fn step(&self, s: Vec<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
        if rng.random::<bool>() {
            return s;
        }
        let moves = self.moves(&s);
        if moves.is_empty() {
            return s;
        }
        let m = &moves[rng.random_range(0..moves.len())];
        let t = Self::apply(&s, m);
        let back = self.moves(&t).len();
        let accept = (moves.len() as f64 / back as f64).min(1.0);
        if rng.random::<f64>() < accept {
            t
        } else {
            s
        }
    }
}

/// Draw `p.samples` proposals, estimate the partition mean and resample.
pub fn sample_subgraphs_view(
    q: &DVector<f64>,
    g: &GraphView,
    space: &EmbeddingSpace,
    p: &RetrievalParams,
    seed: u64,
    proposal: Proposal,
) -> Result<SampleResult, RetrievalError> {
    p.validate()?;
    let edges = g.edges();
    if edges.is_empty() {
        return Err(RetrievalError::NoCandidates);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = p.samples;

    let family = match proposal {
        Proposal::Walk => None,
        Proposal::Enumerated => Some(enumerate_connected_subgraphs(g, p.max_size, p.enumeration_cap)?),
        Proposal::Auto => enumerate_connected_subgraphs(g, p.max_size, p.enumeration_cap).ok(),
    };
    let used = if family.is_some() {
        Proposal::Enumerated
    } else {
        Proposal::Walk
    };

    let proposals: Vec<EdgeSet> = match &family {
        Some(f) => (0..m).map(|_| f[rng.random_range(0..f.len())].clone()).collect(),
        None => {
            let walk = SubsetWalk {
                adj: edge_adjacency(&edges),
                n_edges: edges.len(),
                max_size: p.max_size,
            };
            let mut s = vec![rng.random_range(0..edges.len())];
            for _ in 0..(100 * edges.len()).max(1000) {
                s = walk.step(s, &mut rng);
            }
            let mut out = Vec::with_capacity(m);
            for _ in 0..m {
                for _ in 0..5 {
                    s = walk.step(s, &mut rng);
                }
                out.push(s.clone());
            }
            out
        }
    };

    let scores: Vec<f64> = proposals
        .iter()
        .map(|s| score_edge_set(q, g, s, space, p))
        .collect::<Result<_, _>>()?;
    let logits: Vec<f64> = scores.iter().map(|s| p.beta * s).collect();
    let log_sum = log_sum_exp(&logits);
    let z_hat = if m == 1 {
        logits[0].exp()
    } else {
        (log_sum - (m as f64).ln()).exp()
    };
    let weights: Vec<f64> = logits.iter().map(|l| (l - log_sum).exp()).collect();
    let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

    let mut cdf = Vec::with_capacity(m);
    let mut acc = 0.0;
    for w in &weights {
        acc += w;
        cdf.push(acc);
    }
    let samples = (0..m)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            let i = cdf.partition_point(|&c| c <= u).min(m - 1);
            proposals[i].clone()
        })
        .collect();

    Ok(SampleResult {
        samples,
        z_hat,
        proposals,
        proposal_scores: scores,
        ess,
        proposal: used,
    })
}

/// Text-query sampling over the promoted relations of a store.
pub fn sample_subgraphs(
    query: &str,
    kg: &KnowledgeGraph,
    enc: &TextEncoder,
    p: &RetrievalParams,
    seed: u64,
) -> Result<SampleResult, RetrievalError> {
    let g = GraphView::from_graph(kg);
    let space = EmbeddingSpace::from_graph(kg, enc);
    sample_subgraphs_view(&enc.encode(query), &g, &space, p, seed, Proposal::Auto)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::{gaussian_vector, retrieval_distribution_view};
    use std::collections::BTreeMap;

    fn setup() -> (GraphView, EmbeddingSpace, DVector<f64>) {
        let g = GraphView::from_edges(5, &[(0, 1), (1, 2), (2, 3), (1, 3), (3, 4)]);
        let space = EmbeddingSpace::random(g.ids(), 4, 11);
        (g, space, gaussian_vector(4, 5))
    }

    #[test]
    fn single_sample_z_hat() {
        let (g, space, q) = setup();
        let p = RetrievalParams {
            samples: 1,
            beta: 1.5,
            ..Default::default()
        };
        let r = sample_subgraphs_view(&q, &g, &space, &p, 3, Proposal::Auto).unwrap();
        let s = score_edge_set(&q, &g, &r.proposals[0], &space, &p).unwrap();
        assert_eq!(r.z_hat, (1.5 * s).exp());
    }

    #[test]
    fn beta_zero_z_hat_is_one() {
        let (g, space, q) = setup();
        let p = RetrievalParams {
            samples: 50,
            beta: 0.0,
            ..Default::default()
        };
        for prop in [Proposal::Enumerated, Proposal::Walk] {
            let r = sample_subgraphs_view(&q, &g, &space, &p, 3, prop).unwrap();
            assert_eq!(r.z_hat, 1.0);
        }
    }

    #[test]
    fn reproducible_and_seed_sensitive() {
        let (g, space, q) = setup();
        let p = RetrievalParams {
            samples: 64,
            ..Default::default()
        };
        let a = sample_subgraphs_view(&q, &g, &space, &p, 9, Proposal::Walk).unwrap();
        let b = sample_subgraphs_view(&q, &g, &space, &p, 9, Proposal::Walk).unwrap();
        assert_eq!(a, b);
        let c = sample_subgraphs_view(&q, &g, &space, &p, 10, Proposal::Walk).unwrap();
        assert_ne!(a.proposals, c.proposals);
    }

    #[test]
    fn walk_is_close_to_uniform() {
        let (g, space, q) = setup();
        let p = RetrievalParams {
            samples: 20_000,
            beta: 0.0,
            ..Default::default()
        };
        let family = enumerate_connected_subgraphs(&g, p.max_size, 4096).unwrap();
        let r = sample_subgraphs_view(&q, &g, &space, &p, 1, Proposal::Walk).unwrap();
        let mut counts: BTreeMap<&EdgeSet, usize> = BTreeMap::new();
        for s in &r.proposals {
            *counts.entry(s).or_default() += 1;
        }
        assert_eq!(counts.len(), family.len());
        let expect = p.samples as f64 / family.len() as f64;
        for c in counts.values() {
            assert!((*c as f64 - expect).abs() < 0.35 * expect, "{c} vs {expect}");
        }
    }

    #[test]
    fn z_hat_tracks_exact_mean() {
        let (g, space, q) = setup();
        let p = RetrievalParams {
            samples: 10_000,
            beta: 2.0,
            lambda_spec: 0.1,
            ..Default::default()
        };
        let exact = retrieval_distribution_view(&q, &g, &space, &p).unwrap().mean_weight();
        let r = sample_subgraphs_view(&q, &g, &space, &p, 42, Proposal::Enumerated).unwrap();
        assert!((r.z_hat - exact).abs() / exact < 0.05);
    }

    #[test]
    fn empty_graph_errors() {
        let g = GraphView::empty(2);
        let space = EmbeddingSpace::random(g.ids(), 2, 1);
        let q = gaussian_vector(2, 1);
        let r = sample_subgraphs_view(&q, &g, &space, &RetrievalParams::default(), 1, Proposal::Auto);
        assert_eq!(r.unwrap_err().to_string(), "no candidate subgraphs");
    }
}
