//! Graph functionals used by rewards and retrieval.
//!
//! All functions are pure and operate on a [`GraphView`]. Logarithms are
//! natural.

mod view;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use view::{synthetic_id, GraphView};

use crate::store::KnowledgeGraph;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("{name} must satisfy {rule}, got {value}")]
    OutOfRange {
        name: &'static str,
        rule: &'static str,
        value: f64,
    },
}

fn check(ok: bool, name: &'static str, rule: &'static str, value: f64) -> Result<(), ParamError> {
    if ok {
        Ok(())
    } else {
        Err(ParamError::OutOfRange { name, rule, value })
    }
}

/// Parameters of the spectral and coverage terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralParams {
    /// Ridge added before the log-determinant.
    pub eps: f64,
    /// Ridge of the density operator.
    pub mu: f64,
    /// Per-neighbour coverage saturation, in (0, 1).
    pub kappa: f64,
    /// Neighbourhood radius in hops.
    pub h: usize,
    /// Sharpness of the temporal consistency term.
    pub beta_t: f64,
    pub lambda_spec: f64,
}

impl Default for SpectralParams {
    fn default() -> Self {
        Self {
            eps: 0.01,
            mu: 0.1,
            kappa: 0.5,
            h: 2,
            beta_t: 1.0,
            lambda_spec: 0.1,
        }
    }
}

impl SpectralParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        check(self.eps > 0.0, "eps", "eps > 0", self.eps)?;
        check(self.mu > 0.0, "mu", "mu > 0", self.mu)?;
        check(
            self.kappa > 0.0 && self.kappa < 1.0,
            "kappa",
            "0 < kappa < 1",
            self.kappa,
        )?;
        check(self.h >= 1, "h", "h >= 1", self.h as f64)?;
        check(self.beta_t > 0.0, "beta_t", "beta_t > 0", self.beta_t)
    }
}

/// Which Laplacian a spectral functional is built from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianKind {
    #[default]
    Combinatorial,
    Normalized,
}

impl LaplacianKind {
    pub fn matrix(self, g: &GraphView) -> DMatrix<f64> {
        match self {
            LaplacianKind::Combinatorial => g.laplacian(),
            LaplacianKind::Normalized => g.normalized_laplacian(),
        }
    }
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Threshold below which a Laplacian eigenvalue is treated as zero.
pub fn zero_tolerance(eigenvalues: &[f64]) -> f64 {
    let max = eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    1e-9 * max.max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralTerms {
    /// Trace of the Moore-Penrose pseudoinverse of the Laplacian.
    pub tr_pinv: f64,
    /// `sum_i ln(lambda_i + eps)`.
    pub logdet: f64,
}

pub fn spectral_terms(g: &GraphView, eps: f64) -> SpectralTerms {
    spectral_terms_from(&symmetric_eigenvalues(&g.laplacian()), eps)
}

pub fn spectral_terms_from(eigenvalues: &[f64], eps: f64) -> SpectralTerms {
    let tol = zero_tolerance(eigenvalues);
    SpectralTerms {
        tr_pinv: eigenvalues
            .iter()
            .filter(|&&l| l > tol)
            .map(|l| 1.0 / l)
            .fold(0.0, |a, x| a + x),
        logdet: eigenvalues.iter().map(|l| (l.max(0.0) + eps).ln()).sum(),
    }
}

/// Von Neumann entropy of `(L + mu I) / tr(L + mu I)` for the combinatorial
/// Laplacian.
pub fn von_neumann_entropy(g: &GraphView, mu: f64) -> f64 {
    von_neumann_entropy_with(g, mu, LaplacianKind::Combinatorial)
}

pub fn von_neumann_entropy_with(g: &GraphView, mu: f64, kind: LaplacianKind) -> f64 {
    let n = g.n();
    if n == 0 {
        return 0.0;
    }
    let mut m = kind.matrix(g);
    for i in 0..n {
        m[(i, i)] += mu;
    }
    let trace = m.trace();
    let rho = m / trace;
    let h: f64 = symmetric_eigenvalues(&rho)
        .into_iter()
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .fold(0.0, |a, x| a + x);
    h.clamp(0.0, (n as f64).ln())
}

/// `sum_v [1 - (1 - kappa)^{|N(v; h)|}]`.
pub fn coverage(g: &GraphView, kappa: f64, h: usize) -> f64 {
    let keep = 1.0 - kappa;
    (0..g.n())
        .map(|v| 1.0 - keep.powi(g.hop_neighborhood_size(v, h) as i32))
        .fold(0.0, |a, x| a + x)
}

/// Shannon entropy of the degree distribution; 0 for an edgeless graph.
pub fn degree_entropy(g: &GraphView) -> f64 {
    let deg = g.degrees();
    let total: f64 = deg.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    deg.iter()
        .map(|d| d / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .fold(0.0, |a, x| a + x)
}

/// Frobenius norm of the Laplacian difference after padding both graphs to
/// the union of their vertex ids.
pub fn laplacian_distance(prev: &GraphView, next: &GraphView, kind: LaplacianKind) -> f64 {
    let a = prev.padded_to(next.ids());
    let b = next.padded_to(prev.ids());
    (kind.matrix(&b) - kind.matrix(&a)).norm()
}

/// `exp(-beta_t * ||L_next - L_prev||_F)` over the combinatorial Laplacian.
pub fn temporal_consistency(prev: &GraphView, next: &GraphView, beta_t: f64) -> f64 {
    temporal_consistency_with(prev, next, beta_t, LaplacianKind::Combinatorial)
}

pub fn temporal_consistency_with(prev: &GraphView, next: &GraphView, beta_t: f64, kind: LaplacianKind) -> f64 {
    (-beta_t * laplacian_distance(prev, next, kind)).exp()
}

/// Relative growth of per-episode item counts, guarded against a zero
/// denominator.
pub fn episode_coverage_proxy(prev_count: usize, cur_count: usize) -> f64 {
    (cur_count as f64 - prev_count as f64) / (prev_count as f64).max(1.0)
}

/// Summary of a store's promoted graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphDiagnostics {
    pub entities: usize,
    pub relations: usize,
    pub staged: usize,
    /// Undirected adjacent pairs after collapsing parallel relations.
    pub edges: usize,
    pub connected: bool,
    pub coverage: f64,
    pub von_neumann_entropy: f64,
    pub degree_entropy: f64,
    pub tr_pinv: f64,
    pub logdet: f64,
}

impl GraphDiagnostics {
    pub fn of(kg: &KnowledgeGraph, p: &SpectralParams) -> Self {
        let g = GraphView::from_graph(kg);
        let spectral = spectral_terms(&g, p.eps);
        Self {
            entities: kg.entities.len(),
            relations: kg.relations.len(),
            staged: kg.staged.len(),
            edges: g.edge_count(),
            connected: g.is_connected(),
            coverage: coverage(&g, p.kappa, p.h),
            von_neumann_entropy: von_neumann_entropy(&g, p.mu),
            degree_entropy: degree_entropy(&g),
            tr_pinv: spectral.tr_pinv,
            logdet: spectral.logdet,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN4: f64 = 1.386_294_361_119_890_6;

    #[test]
    fn diagnostics_of_a_path() {
        let mut kg = KnowledgeGraph::new();
        let mut x = crate::extraction::ExtractionResult::default();
        x.add_entity("P", "a").add_entity("P", "b").add_entity("P", "c");
        x.add_relation("r", crate::extraction::RelationMention::new("a", "b"));
        x.add_relation("r", crate::extraction::RelationMention::new("b", "c"));
        kg.upsert_extraction(&x, "t", chrono::DateTime::UNIX_EPOCH);
        let d = GraphDiagnostics::of(&kg, &SpectralParams::default());
        assert_eq!((d.entities, d.relations, d.edges), (3, 2, 2));
        assert!(d.connected);
        // path on three vertices: Laplacian eigenvalues 0, 1, 3
        assert!((d.tr_pinv - (1.0 + 1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn single_edge_spectral() {
        let g = GraphView::from_edges(2, &[(0, 1)]);
        let t = spectral_terms(&g, 0.01);
        assert!((t.tr_pinv - 0.5).abs() < 1e-12);
        assert!((t.logdet - (0.01f64 * 2.01).ln()).abs() < 1e-12);
        assert!((t.logdet + 3.907_035_463_917_107).abs() < 1e-12);
    }

    #[test]
    fn entropy_cases() {
        assert!((von_neumann_entropy(&GraphView::empty(4), 0.3) - LN4).abs() < 1e-12);
        assert_eq!(von_neumann_entropy(&GraphView::empty(1), 0.3), 0.0);
        let k3 = GraphView::from_edges(3, &[(0, 1), (1, 2), (0, 2)]);
        let h = von_neumann_entropy_with(&k3, 0.1, LaplacianKind::Normalized);
        assert!(h > 0.0 && h <= 3f64.ln());
    }

    #[test]
    fn coverage_cases() {
        assert_eq!(coverage(&GraphView::empty(3), 0.5, 2), 0.0);
        let p3 = GraphView::from_edges(3, &[(0, 1), (1, 2)]);
        assert!((coverage(&p3, 0.5, 1) - (0.5 + 0.75 + 0.5)).abs() < 1e-15);
        assert!((coverage(&p3, 0.5, 2) - 3.0 * 0.75).abs() < 1e-15);
    }

    #[test]
    fn degree_entropy_cases() {
        let k4 = GraphView::from_edges(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        assert!((degree_entropy(&k4) - LN4).abs() < 1e-12);
        assert!((degree_entropy(&GraphView::from_edges(2, &[(0, 1)])) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(degree_entropy(&GraphView::empty(3)), 0.0);
    }

    #[test]
    fn temporal_cases() {
        let p2 = GraphView::from_edges(2, &[(0, 1)]);
        assert_eq!(temporal_consistency(&p2, &p2, 1.0), 1.0);
        let tc = temporal_consistency(&p2, &GraphView::empty(2), 1.0);
        assert!((tc - (-2f64).exp()).abs() < 1e-15);
        // missing vertices are padded as isolated
        let small = GraphView::from_edges(1, &[]);
        assert_eq!(temporal_consistency(&small, &GraphView::empty(3), 1.0), 1.0);
    }

    #[test]
    fn coverage_proxy() {
        assert_eq!(episode_coverage_proxy(0, 5), 5.0);
        assert_eq!(episode_coverage_proxy(10, 10), 0.0);
        assert_eq!(episode_coverage_proxy(20, 25), 0.25);
    }

    #[test]
    fn params_validate() {
        assert!(SpectralParams::default().validate().is_ok());
        let bad = SpectralParams {
            kappa: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
