//! Deterministic text and node embeddings.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RetrievalError;
use crate::metrics::GraphView;
use crate::store::KnowledgeGraph;

/// Seeded Gaussian vector of length `d`.
pub fn gaussian_vector(d: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng))
}

/// Seeded Gaussian matrix with entries scaled by `scale`.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64, scale: f64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * scale
    })
}

fn hash_seed(seed: u64, token: &str) -> u64 {
    let digest = Sha256::digest(token.as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(b) ^ seed
}

/// Character trigrams of the lower-cased, space-padded text.
pub fn char_trigrams(text: &str) -> Vec<String> {
    let padded: Vec<char> = format!(" {} ", text.to_lowercase()).chars().collect();
    padded.windows(3).map(|w| w.iter().collect()).collect()
}

/// Random projection of a bag of character trigrams, normalized to unit
/// length. Each trigram maps to a fixed Gaussian direction derived from the
/// encoder seed and the trigram bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextEncoder {
    pub d: usize,
    pub seed: u64,
}

impl TextEncoder {
    pub fn new(d: usize, seed: u64) -> Result<Self, RetrievalError> {
        if d == 0 {
            return Err(RetrievalError::InvalidParam(
                "embedding dimension must be positive".into(),
            ));
        }
        Ok(Self { d, seed })
    }

    pub fn encode(&self, text: &str) -> DVector<f64> {
        let mut counts: BTreeMap<String, f64> = BTreeMap::new();
        for g in char_trigrams(text) {
            *counts.entry(g).or_default() += 1.0;
        }
        let mut v = DVector::zeros(self.d);
        for (g, c) in counts {
            v += gaussian_vector(self.d, hash_seed(self.seed, &g)) * c;
        }
        let norm = v.norm();
        if norm > 0.0 {
            v /= norm;
        }
        v
    }
}

/// Node embeddings keyed by vertex id, all of length `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSpace {
    d: usize,
    nodes: BTreeMap<String, DVector<f64>>,
}

impl EmbeddingSpace {
    pub fn new(d: usize, nodes: BTreeMap<String, DVector<f64>>) -> Result<Self, RetrievalError> {
        if let Some((id, v)) = nodes.iter().find(|(_, v)| v.len() != d) {
            return Err(RetrievalError::DimensionMismatch {
                what: format!("embedding of {id}"),
                expected: d,
                found: v.len(),
            });
        }
        Ok(Self { d, nodes })
    }

    /// Each entity embedded from its name with `enc`.
    pub fn from_graph(kg: &KnowledgeGraph, enc: &TextEncoder) -> Self {
        let nodes = kg
            .entities
            .values()
            .map(|e| (e.id.clone(), enc.encode(&e.name)))
            .collect();
        Self { d: enc.d, nodes }
    }

    /// Independent seeded Gaussian embeddings, unit-normalized.
    pub fn random(ids: &[String], d: usize, seed: u64) -> Self {
        let nodes = ids
            .iter()
            .map(|id| {
                let v = gaussian_vector(d, hash_seed(seed, id));
                let n = v.norm();
                (id.clone(), if n > 0.0 { v / n } else { v })
            })
            .collect();
        Self { d, nodes }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn get(&self, id: &str) -> Option<&DVector<f64>> {
        self.nodes.get(id)
    }

    /// Feature matrix with one row per vertex of `g`, in `g`'s order.
    pub fn features(&self, g: &GraphView) -> Result<DMatrix<f64>, RetrievalError> {
        let mut x = DMatrix::zeros(g.n(), self.d);
        for (i, id) in g.ids().iter().enumerate() {
            let v = self
                .nodes
                .get(id)
                .ok_or_else(|| RetrievalError::MissingEmbedding(id.clone()))?;
            x.set_row(i, &v.transpose());
        }
        Ok(x)
    }
}
