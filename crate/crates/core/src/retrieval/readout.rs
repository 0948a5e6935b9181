//! One-layer graph convolution and query/subgraph cross-attention.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::embedding::gaussian_matrix;
use super::RetrievalError;
use crate::metrics::GraphView;

/// Forward-pass parameters of the readout.
///
/// Shapes: `w_in` d x d_hid, `b` d_hid, `w_out` d_hid x d, `w_q` and `w_k`
/// d x d_k, `w_v` 2d x d.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutParams {
    pub seed: Option<u64>,
    pub w_in: DMatrix<f64>,
    pub b: DVector<f64>,
    pub w_out: DMatrix<f64>,
    pub w_q: DMatrix<f64>,
    pub w_k: DMatrix<f64>,
    pub w_v: DMatrix<f64>,
}

/// Serialized form of a seeded bundle; the matrices are regenerated on load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename = "readout_params")]
pub struct ReadoutRecord {
    pub seed: u64,
    pub d: usize,
    pub d_hid: usize,
    pub d_k: usize,
}

fn dim_err(what: &str, expected: usize, found: usize) -> RetrievalError {
    RetrievalError::DimensionMismatch {
        what: what.into(),
        expected,
        found,
    }
}

impl ReadoutParams {
    /// Gaussian weights scaled by `1/sqrt(fan_in)`, zero bias.
    pub fn seeded(seed: u64, d: usize, d_hid: usize, d_k: usize) -> Self {
        let s = |fan_in: usize| 1.0 / (fan_in.max(1) as f64).sqrt();
        Self {
            seed: Some(seed),
            w_in: gaussian_matrix(d, d_hid, seed, s(d)),
            b: DVector::zeros(d_hid),
            w_out: gaussian_matrix(d_hid, d, seed.wrapping_add(1), s(d_hid)),
            w_q: gaussian_matrix(d, d_k, seed.wrapping_add(2), s(d)),
            w_k: gaussian_matrix(d, d_k, seed.wrapping_add(3), s(d)),
            w_v: gaussian_matrix(2 * d, d, seed.wrapping_add(4), s(2 * d)),
        }
    }

    pub fn zeros(d: usize, d_hid: usize, d_k: usize) -> Self {
        Self {
            seed: None,
            w_in: DMatrix::zeros(d, d_hid),
            b: DVector::zeros(d_hid),
            w_out: DMatrix::zeros(d_hid, d),
            w_q: DMatrix::zeros(d, d_k),
            w_k: DMatrix::zeros(d, d_k),
            w_v: DMatrix::zeros(2 * d, d),
        }
    }

    pub fn d(&self) -> usize {
        self.w_in.nrows()
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        let d = self.d();
        let d_hid = self.w_in.ncols();
        let d_k = self.w_q.ncols();
        let checks = [
            ("b", d_hid, self.b.len()),
            ("w_out rows", d_hid, self.w_out.nrows()),
            ("w_out cols", d, self.w_out.ncols()),
            ("w_q rows", d, self.w_q.nrows()),
            ("w_k rows", d, self.w_k.nrows()),
            ("w_k cols", d_k, self.w_k.ncols()),
            ("w_v rows", 2 * d, self.w_v.nrows()),
            ("w_v cols", d, self.w_v.ncols()),
        ];
        for (what, e, f) in checks {
            if e != f {
                return Err(dim_err(what, e, f));
            }
        }
        Ok(())
    }

    pub fn to_record(&self) -> Result<ReadoutRecord, RetrievalError> {
        Ok(ReadoutRecord {
            seed: self.seed.ok_or(RetrievalError::Unseeded)?,
            d: self.d(),
            d_hid: self.w_in.ncols(),
            d_k: self.w_q.ncols(),
        })
    }

    pub fn from_record(r: &ReadoutRecord) -> Self {
        Self::seeded(r.seed, r.d, r.d_hid, r.d_k)
    }
}

/// Row-wise softmax.
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

/// `softmax(Q K^T * scale + mask) V` with rows as tokens.
pub fn cross_attention(
    q: &DMatrix<f64>,
    k: &DMatrix<f64>,
    v: &DMatrix<f64>,
    scale: f64,
    mask: Option<&DMatrix<f64>>,
) -> DMatrix<f64> {
    let mut logits = q * k.transpose() * scale;
    if let Some(m) = mask {
        logits += m;
    }
    softmax_rows(&logits) * v
}

/// Mean over vertices of `relu(L X W_in + b) W_out`.
pub fn gnn_forward(h: &GraphView, x: &DMatrix<f64>, rp: &ReadoutParams) -> Result<DVector<f64>, RetrievalError> {
    rp.validate()?;
    if h.n() == 0 {
        return Err(RetrievalError::EmptySubgraph);
    }
    if x.nrows() != h.n() {
        return Err(dim_err("feature rows", h.n(), x.nrows()));
    }
    if x.ncols() != rp.d() {
        return Err(dim_err("feature columns", rp.d(), x.ncols()));
    }
    let mut z = h.laplacian() * x * &rp.w_in;
    for mut row in z.row_iter_mut() {
        row += rp.b.transpose();
        row.apply(|v| *v = v.max(0.0));
    }
    let y = z * &rp.w_out;
    Ok(y.row_mean().transpose())
}

/// Fuse the query with the GNN subgraph vector through single-key
/// cross-attention; returns a vector of length d.
pub fn readout(
    q: &DVector<f64>,
    h: &GraphView,
    x: &DMatrix<f64>,
    rp: &ReadoutParams,
) -> Result<DVector<f64>, RetrievalError> {
    let d = rp.d();
    if q.len() != d {
        return Err(dim_err("query", d, q.len()));
    }
    let g = gnn_forward(h, x, rp)?;
    let row = |m: nalgebra::RowDVector<f64>| DMatrix::from_row_slice(1, m.len(), m.as_slice());
    let qm = row(q.transpose() * &rp.w_q);
    let km = row(g.transpose() * &rp.w_k);
    let mut gq = DVector::zeros(2 * d);
    gq.rows_mut(0, d).copy_from(&g);
    gq.rows_mut(d, d).copy_from(q);
    let vm = row(gq.transpose() * &rp.w_v);
    let out = cross_attention(&qm, &km, &vm, 1.0 / (d as f64).sqrt(), None);
    Ok(out.row(0).transpose())
}
