//! Multi-scale attention compression of an embedding matrix, its training
//! loss, and an exact checker for the compression performance bound on
//! small tabular decision processes.
//!
//! Each scale attends from `k_i` learned queries over the `n` input rows and
//! yields a `k_i x d` block. Blocks of different heights are combined on a
//! common `k_eff = max k_i` rows: the weighted sum zero-pads each block, and
//! the pairwise cross-scale terms first mix each block's rows with a square
//! projection, then zero-pad.

mod bound;
mod loss;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub use bound::{bound_check, exact_value, random_mdp, BoundReport, BoundTerms, MdpSpec, PolicyTable, TabularMdp};
pub use loss::{compression_loss, CompressionLoss, LinearDecoder, LossWeights, MiStatus};

const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompressionError {
    #[error("embedding width {d} is not divisible by the scale count {scales}")]
    IndivisibleWidth { d: usize, scales: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid weights: {0}")]
    Weights(String),
    #[error("invalid discount {0}; expected 0 < gamma < 1")]
    Discount(f64),
    #[error("transition row for state {state}, action {action} does not sum to 1")]
    Transition { state: usize, action: usize },
    #[error("policy evaluation system is singular")]
    Singular,
}

/// Learned tensors of one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Scale {
    /// `k x d` queries.
    pub queries: DMatrix<f64>,
    /// `d x d` key projection.
    pub key_proj: DMatrix<f64>,
    /// `d x d` value projection.
    pub value_proj: DMatrix<f64>,
    /// `k x n` additive attention bias.
    pub bias: DMatrix<f64>,
    /// `k x k` row mixing applied before cross-scale interaction.
    pub align: DMatrix<f64>,
}

impl Scale {
    pub fn rows(&self) -> usize {
        self.queries.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionParams {
    pub scales: Vec<Scale>,
    /// Convex weights of the per-scale blocks.
    pub weights: Vec<f64>,
    /// `L x L` cross-scale weights; only entries above the diagonal are read.
    pub cross_weights: DMatrix<f64>,
    /// `k_eff x 3 k_eff` mixing of the stacked interaction blocks.
    pub cross_mix: DMatrix<f64>,
    /// `k_eff x d` offset of the cross-scale term.
    pub cross_bias: DMatrix<f64>,
}

impl CompressionParams {
    /// Gaussian parameters with entries of variance `1/d`, uniform scale
    /// weights and cross weights of `cross`.
    pub fn seeded(n: usize, d: usize, ks: &[usize], cross: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (d.max(1) as f64).sqrt()).expect("finite std");
        let mut mat = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| normal.sample(&mut rng));
        let scales: Vec<Scale> = ks
            .iter()
            .map(|&k| Scale {
                queries: mat(k, d),
                key_proj: mat(d, d),
                value_proj: mat(d, d),
                bias: mat(k, n),
                align: mat(k, k),
            })
            .collect();
        let l = ks.len();
        let k_eff = ks.iter().copied().max().unwrap_or(0);
        let cross_mix = mat(k_eff, 3 * k_eff);
        let cross_bias = mat(k_eff, d);
        Self {
            scales,
            weights: vec![1.0 / l.max(1) as f64; l],
            cross_weights: DMatrix::from_fn(l, l, |i, j| if j > i { cross } else { 0.0 }),
            cross_mix,
            cross_bias,
        }
    }

    pub fn scale_count(&self) -> usize {
        self.scales.len()
    }

    pub fn k_eff(&self) -> usize {
        self.scales.iter().map(Scale::rows).max().unwrap_or(0)
    }

    fn has_cross_terms(&self) -> bool {
        let l = self.scale_count();
        (0..l).any(|i| (i + 1..l).any(|j| self.cross_weights[(i, j)] != 0.0))
    }

    /// Check every shape against an `n x d` input and the weight constraints.
    pub fn validate(&self, n: usize, d: usize) -> Result<(), CompressionError> {
        let l = self.scale_count();
        if l == 0 {
            return Err(CompressionError::Shape("at least one scale is required".into()));
        }
        if !d.is_multiple_of(l) {
            return Err(CompressionError::IndivisibleWidth { d, scales: l });
        }
        let shape = |what: String, m: &DMatrix<f64>, r: usize, c: usize| {
            if m.shape() == (r, c) {
                Ok(())
            } else {
                Err(CompressionError::Shape(format!(
                    "{what} is {:?}, expected ({r}, {c})",
                    m.shape()
                )))
            }
        };
        for (i, s) in self.scales.iter().enumerate() {
            let k = s.rows();
            if k == 0 {
                return Err(CompressionError::Shape(format!("scale {i} has no queries")));
            }
            shape(format!("scale {i} queries"), &s.queries, k, d)?;
            shape(format!("scale {i} key projection"), &s.key_proj, d, d)?;
            shape(format!("scale {i} value projection"), &s.value_proj, d, d)?;
            shape(format!("scale {i} bias"), &s.bias, k, n)?;
            shape(format!("scale {i} alignment"), &s.align, k, k)?;
        }
        if self.weights.len() != l {
            return Err(CompressionError::Weights(format!(
                "{} scale weights for {l} scales",
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|w| !(0.0..).contains(w))
            || (self.weights.iter().sum::<f64>() - 1.0).abs() > SIMPLEX_TOL
        {
            return Err(CompressionError::Weights(
                "scale weights must be non-negative and sum to 1".into(),
            ));
        }
        shape("cross weights".into(), &self.cross_weights, l, l)?;
        if self.cross_weights.iter().any(|w| !(0.0..).contains(w)) {
            return Err(CompressionError::Weights("cross weights must be non-negative".into()));
        }
        if self.has_cross_terms() {
            let k = self.k_eff();
            shape("cross mixing".into(), &self.cross_mix, k, 3 * k)?;
            shape("cross bias".into(), &self.cross_bias, k, d)?;
        }
        Ok(())
    }
}

/// Row-wise softmax, shifted by each row's maximum.
pub fn softmax_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.apply(|x| *x = (*x - max).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

fn pad_rows(m: &DMatrix<f64>, rows: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows, m.ncols());
    out.rows_mut(0, m.nrows()).copy_from(m);
    out
}

/// Attention output of one scale: `softmax(Q (H Wk)^T / sqrt(d/L) + M) H Wv`.
pub fn scale_output(h: &DMatrix<f64>, s: &Scale, scale_count: usize) -> DMatrix<f64> {
    let d = h.ncols();
    let temperature = (d as f64 / scale_count as f64).sqrt();
    let keys = h * &s.key_proj;
    let values = h * &s.value_proj;
    let logits = &s.queries * keys.transpose() / temperature + &s.bias;
    softmax_rows(&logits) * values
}

/// Pairwise interaction of two scale outputs on `k_eff` rows.
pub fn cross_scale(a: &DMatrix<f64>, sa: &Scale, b: &DMatrix<f64>, sb: &Scale, p: &CompressionParams) -> DMatrix<f64> {
    let k = p.k_eff();
    let pa = pad_rows(&(&sa.align * a), k);
    let pb = pad_rows(&(&sb.align * b), k);
    let d = a.ncols();
    let mut stacked = DMatrix::zeros(3 * k, d);
    stacked.rows_mut(0, k).copy_from(&pa.component_mul(&pb));
    stacked.rows_mut(k, k).copy_from(&pa);
    stacked.rows_mut(2 * k, k).copy_from(&pb);
    (&p.cross_mix * stacked + &p.cross_bias).map(f64::tanh)
}

/// Compress `h` (`n x d`) to `k_eff x d`.
pub fn multiscale_compress(h: &DMatrix<f64>, p: &CompressionParams) -> Result<DMatrix<f64>, CompressionError> {
    let (n, d) = h.shape();
    p.validate(n, d)?;
    let l = p.scale_count();
    let k = p.k_eff();
    let outputs: Vec<DMatrix<f64>> = p.scales.iter().map(|s| scale_output(h, s, l)).collect();
    let mut z = DMatrix::zeros(k, d);
    for (w, o) in p.weights.iter().zip(&outputs) {
        z += pad_rows(o, k) * *w;
    }
    for i in 0..l {
        for j in i + 1..l {
            let xi = p.cross_weights[(i, j)];
            if xi != 0.0 {
                z += cross_scale(&outputs[i], &p.scales[i], &outputs[j], &p.scales[j], p) * xi;
            }
        }
    }
    Ok(z)
}
