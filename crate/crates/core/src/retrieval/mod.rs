//! Gibbs retrieval over connected subgraphs and the GNN readout.
//!
//! A subgraph is a connected set of at most `max_size` edges of the
//! undirected graph view. Its score is the query alignment with the mean
//! member embedding minus a spectral penalty:
//!
//! ```text
//! score(H) = <q, mean(X_H)> - lambda_spec * (tr(L_H^+) + 0.5 * logdet(L_H + eps I))
//! ```
//!
//! and subgraphs are weighted by `exp(beta * score)`.

mod embedding;
mod readout;
mod sampling;

use std::collections::BTreeSet;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{spectral_terms, GraphView};
use crate::store::KnowledgeGraph;

pub use embedding::{char_trigrams, gaussian_matrix, gaussian_vector, EmbeddingSpace, TextEncoder};
pub use readout::{cross_attention, gnn_forward, readout, softmax_rows, ReadoutParams, ReadoutRecord};
pub use sampling::{sample_subgraphs, sample_subgraphs_view, Proposal, SampleResult};

pub const DEFAULT_ENUMERATION_CAP: usize = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RetrievalError {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("more than {cap} connected subgraphs; use sample_subgraphs instead")]
    FamilyTooLarge { cap: usize },
    #[error("no candidate subgraphs")]
    NoCandidates,
    #[error("empty subgraph")]
    EmptySubgraph,
    #[error("no embedding for vertex {0}")]
    MissingEmbedding(String),
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("parameter bundle has no recorded seed")]
    Unseeded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalParams {
    /// Inverse temperature; 0 gives the uniform distribution.
    pub beta: f64,
    pub lambda_spec: f64,
    pub eps: f64,
    /// Maximum number of edges in a subgraph.
    pub max_size: usize,
    /// Monte Carlo sample count.
    pub samples: usize,
    pub enumeration_cap: usize,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self {
            beta: 1.0,
            lambda_spec: 0.1,
            eps: 0.01,
            max_size: 3,
            samples: 256,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        }
    }
}

impl RetrievalParams {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        let bad = |m: &str| Err(RetrievalError::InvalidParam(m.into()));
        if !(0.0..f64::INFINITY).contains(&self.beta) {
            return bad("beta must be finite and non-negative");
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return bad("eps must be positive");
        }
        if self.samples == 0 {
            return bad("sample count must be at least 1");
        }
        if self.max_size == 0 {
            return bad("max_size must be at least 1");
        }
        Ok(())
    }
}

/// `<q, mean(X)> - lambda_spec * (tr(L^+) + 0.5 * logdet(L + eps I))` for a
/// subgraph `h` whose member embeddings are `members` (one per vertex of `h`,
/// in vertex order).
pub fn subgraph_score(
    q: &DVector<f64>,
    h: &GraphView,
    members: &[DVector<f64>],
    p: &RetrievalParams,
) -> Result<f64, RetrievalError> {
    if h.n() == 0 || members.is_empty() {
        return Err(RetrievalError::EmptySubgraph);
    }
    if members.len() != h.n() {
        return Err(RetrievalError::DimensionMismatch {
            what: "member embeddings".into(),
            expected: h.n(),
            found: members.len(),
        });
    }
    let mut mean = DVector::zeros(q.len());
    for m in members {
        if m.len() != q.len() {
            return Err(RetrievalError::DimensionMismatch {
                what: "member embedding".into(),
                expected: q.len(),
                found: m.len(),
            });
        }
        mean += m;
    }
    mean /= members.len() as f64;
    let t = spectral_terms(h, p.eps);
    Ok(q.dot(&mean) - p.lambda_spec * (t.tr_pinv + 0.5 * t.logdet))
}

/// Edge-subset subgraph as positions into [`GraphView::edges`], sorted.
pub type EdgeSet = Vec<usize>;

/// For every edge, the edges sharing an endpoint with it.
pub(crate) fn edge_adjacency(edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let touches = |a: (usize, usize), b: (usize, usize)| a.0 == b.0 || a.0 == b.1 || a.1 == b.0 || a.1 == b.1;
    (0..edges.len())
        .map(|i| {
            (0..edges.len())
                .filter(|&j| j != i && touches(edges[i], edges[j]))
                .collect()
        })
        .collect()
}

/// Whether the edge set is non-empty and connected through shared endpoints.
pub(crate) fn is_connected_set(set: &[usize], adj: &[Vec<usize>]) -> bool {
    let Some(&first) = set.first() else { return false };
    let members: BTreeSet<usize> = set.iter().copied().collect();
    let mut seen = BTreeSet::from([first]);
    let mut stack = vec![first];
    while let Some(e) = stack.pop() {
        for &f in &adj[e] {
            if members.contains(&f) && seen.insert(f) {
                stack.push(f);
            }
        }
    }
    seen.len() == members.len()
}

/// All connected edge subsets with `1..=max_size` edges, in size then
/// lexicographic order. Fails once the family exceeds `cap`.
pub fn enumerate_connected_subgraphs(
    g: &GraphView,
    max_size: usize,
    cap: usize,
) -> Result<Vec<EdgeSet>, RetrievalError> {
    let edges = g.edges();
    let adj = edge_adjacency(&edges);
    let mut family: Vec<EdgeSet> = Vec::new();
    let mut layer: BTreeSet<EdgeSet> = (0..edges.len()).map(|e| vec![e]).collect();
    let mut size = 1;
    while !layer.is_empty() && size <= max_size {
        if family.len() + layer.len() > cap {
            return Err(RetrievalError::FamilyTooLarge { cap });
        }
        family.extend(layer.iter().cloned());
        if size == max_size {
            break;
        }
        let mut next = BTreeSet::new();
        for set in &layer {
            for &e in set {
                for &f in &adj[e] {
                    if set.binary_search(&f).is_err() {
                        let mut grown = set.clone();
                        let pos = grown.binary_search(&f).unwrap_err();
                        grown.insert(pos, f);
                        next.insert(grown);
                    }
                }
            }
            if next.len() + family.len() > cap {
                return Err(RetrievalError::FamilyTooLarge { cap });
            }
        }
        layer = next;
        size += 1;
    }
    Ok(family)
}

/// Score an edge subset of `g` using node embeddings from `space`.
pub fn score_edge_set(
    q: &DVector<f64>,
    g: &GraphView,
    set: &[usize],
    space: &EmbeddingSpace,
    p: &RetrievalParams,
) -> Result<f64, RetrievalError> {
    let h = g.edge_subgraph(set);
    let members: Vec<DVector<f64>> = h
        .ids()
        .iter()
        .map(|id| {
            space
                .get(id)
                .cloned()
                .ok_or_else(|| RetrievalError::MissingEmbedding(id.clone()))
        })
        .collect::<Result<_, _>>()?;
    subgraph_score(q, &h, &members, p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSubgraph {
    /// Edge positions into the graph's sorted edge list.
    pub edges: EdgeSet,
    /// The same edges as vertex-id pairs.
    pub edge_ids: Vec<(String, String)>,
    pub score: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsDistribution {
    pub entries: Vec<ScoredSubgraph>,
    /// `ln sum exp(beta * score)` over the family.
    pub log_partition: f64,
}

impl GibbsDistribution {
    /// `(1/|F|) sum exp(beta * score)`: the quantity estimated by uniform
    /// Monte Carlo proposals.
    pub fn mean_weight(&self) -> f64 {
        (self.log_partition - (self.entries.len() as f64).ln()).exp()
    }

    pub fn probability_of(&self, edges: &[usize]) -> Option<f64> {
        self.entries.iter().find(|e| e.edges == edges).map(|e| e.probability)
    }
}

/// Numerically stable `ln sum exp(x_i)`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `exp(beta * s_i) / sum_j exp(beta * s_j)`, computed in log space.
pub fn gibbs_probabilities(scores: &[f64], beta: f64) -> Vec<f64> {
    let logits: Vec<f64> = scores.iter().map(|s| beta * s).collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

fn edge_ids(g: &GraphView, set: &[usize]) -> Vec<(String, String)> {
    let all = g.edges();
    set.iter()
        .map(|&k| (g.ids()[all[k].0].clone(), g.ids()[all[k].1].clone()))
        .collect()
}

/// Exact Gibbs distribution over the enumerated family of `g`.
pub fn retrieval_distribution_view(
    q: &DVector<f64>,
    g: &GraphView,
    space: &EmbeddingSpace,
    p: &RetrievalParams,
) -> Result<GibbsDistribution, RetrievalError> {
    p.validate()?;
    let family = enumerate_connected_subgraphs(g, p.max_size, p.enumeration_cap)?;
    if family.is_empty() {
        return Err(RetrievalError::NoCandidates);
    }
    let scores: Vec<f64> = family
        .iter()
        .map(|s| score_edge_set(q, g, s, space, p))
        .collect::<Result<_, _>>()?;
    let logits: Vec<f64> = scores.iter().map(|s| p.beta * s).collect();
    let log_z = log_sum_exp(&logits);
    let probs = gibbs_probabilities(&scores, p.beta);
    let entries = family
        .into_iter()
        .zip(scores)
        .zip(probs)
        .map(|((edges, score), probability)| ScoredSubgraph {
            edge_ids: edge_ids(g, &edges),
            edges,
            score,
            probability,
        })
        .collect();
    Ok(GibbsDistribution {
        entries,
        log_partition: log_z,
    })
}

/// Exact Gibbs distribution for a text query over the promoted relations of
/// a store, with entity embeddings derived from names.
pub fn retrieval_distribution(
    query: &str,
    kg: &KnowledgeGraph,
    enc: &TextEncoder,
    p: &RetrievalParams,
) -> Result<GibbsDistribution, RetrievalError> {
    let g = GraphView::from_graph(kg);
    let space = EmbeddingSpace::from_graph(kg, enc);
    retrieval_distribution_view(&enc.encode(query), &g, &space, p)
}
