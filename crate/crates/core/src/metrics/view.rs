//! Dense undirected adjacency view of a graph.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::DMatrix;

use crate::store::KnowledgeGraph;

/// Undirected 0/1 adjacency over vertex ids in sorted order.
///
/// Directed relations collapse to a single undirected edge; a relation whose
/// endpoints coincide sets the diagonal entry.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphView {
    ids: Vec<String>,
    adjacency: DMatrix<f64>,
}

/// Zero-padded synthetic vertex id, so synthetic ids sort numerically.
pub fn synthetic_id(i: usize) -> String {
    format!("v{i:05}")
}

impl GraphView {
    /// Build from ids (any order, duplicates merged) and edges given as pairs
    /// of positions into `ids`.
    ///
    /// # Panics
    /// If an edge references a position outside `ids`.
    pub fn new(ids: Vec<String>, edges: &[(usize, usize)]) -> Self {
        let named: Vec<(String, String)> = edges.iter().map(|&(a, b)| (ids[a].clone(), ids[b].clone())).collect();
        Self::from_named_edges(ids, named.iter().map(|(a, b)| (a.as_str(), b.as_str())))
    }

    /// Build from ids and edges named by id. Endpoints not in `ids` are
    /// added as vertices.
    pub fn from_named_edges<'a, I>(ids: Vec<String>, edges: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let edges: Vec<(&str, &str)> = edges.into_iter().collect();
        let mut set: BTreeSet<String> = ids.into_iter().collect();
        for (a, b) in &edges {
            set.insert((*a).to_string());
            set.insert((*b).to_string());
        }
        let ids: Vec<String> = set.into_iter().collect();
        let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let n = ids.len();
        let mut adjacency = DMatrix::zeros(n, n);
        for (a, b) in edges {
            let (i, j) = (index[a], index[b]);
            adjacency[(i, j)] = 1.0;
            adjacency[(j, i)] = 1.0;
        }
        Self { ids, adjacency }
    }

    /// `n` vertices with synthetic ids and the given undirected edges.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        Self::new((0..n).map(synthetic_id).collect(), edges)
    }

    pub fn empty(n: usize) -> Self {
        Self::from_edges(n, &[])
    }

    /// Promoted relations of a store; staged rows are ignored.
    pub fn from_graph(kg: &KnowledgeGraph) -> Self {
        Self::from_named_edges(
            kg.entities.keys().cloned().collect(),
            kg.relations.keys().map(|k| (k.src_id.as_str(), k.dst_id.as_str())),
        )
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.binary_search_by(|x| x.as_str().cmp(id)).ok()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[(i, j)] != 0.0
    }

    /// Row sums of the adjacency matrix.
    pub fn degrees(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.adjacency.row(i).sum()).collect()
    }

    /// Undirected edges as `(i, j)` with `i <= j`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i..n {
                if self.has_edge(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.edges().len()
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n()).filter(|&j| j != i && self.has_edge(i, j)).collect()
    }

    /// Copy with one more undirected edge.
    pub fn with_edge(&self, i: usize, j: usize) -> Self {
        let mut g = self.clone();
        g.adjacency[(i, j)] = 1.0;
        g.adjacency[(j, i)] = 1.0;
        g
    }

    /// Copy without the edge `(i, j)`.
    pub fn without_edge(&self, i: usize, j: usize) -> Self {
        let mut g = self.clone();
        g.adjacency[(i, j)] = 0.0;
        g.adjacency[(j, i)] = 0.0;
        g
    }

    /// Copy extended to the union of its ids and `ids`; new vertices are
    /// isolated.
    pub fn padded_to(&self, ids: &[String]) -> Self {
        let all: BTreeSet<String> = self.ids.iter().chain(ids.iter()).cloned().collect();
        let edges: Vec<(String, String)> = self
            .edges()
            .into_iter()
            .map(|(i, j)| (self.ids[i].clone(), self.ids[j].clone()))
            .collect();
        Self::from_named_edges(
            all.into_iter().collect(),
            edges.iter().map(|(a, b)| (a.as_str(), b.as_str())),
        )
    }

    /// Subgraph formed by the given edges (indices into [`Self::edges`]) and
    /// their endpoints only.
    pub fn edge_subgraph(&self, edge_indices: &[usize]) -> Self {
        let all = self.edges();
        let named: Vec<(String, String)> = edge_indices
            .iter()
            .map(|&k| {
                let (i, j) = all[k];
                (self.ids[i].clone(), self.ids[j].clone())
            })
            .collect();
        Self::from_named_edges(Vec::new(), named.iter().map(|(a, b)| (a.as_str(), b.as_str())))
    }

    /// Combinatorial Laplacian `D - A`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(self.degrees()));
        d - &self.adjacency
    }

    /// Normalized Laplacian `I - D^{-1/2} A D^{-1/2}`; isolated vertices get
    /// a zero row and column.
    pub fn normalized_laplacian(&self) -> DMatrix<f64> {
        let n = self.n();
        let deg = self.degrees();
        let mut l = DMatrix::zeros(n, n);
        for i in 0..n {
            if deg[i] > 0.0 {
                l[(i, i)] = 1.0;
            }
            for j in 0..n {
                if self.adjacency[(i, j)] != 0.0 {
                    l[(i, j)] -= self.adjacency[(i, j)] / (deg[i] * deg[j]).sqrt();
                }
            }
        }
        l
    }

    /// Number of vertices within `h` hops of `v`, excluding `v` itself.
    pub fn hop_neighborhood_size(&self, v: usize, h: usize) -> usize {
        let n = self.n();
        let mut dist = vec![usize::MAX; n];
        dist[v] = 0;
        let mut queue = VecDeque::from([v]);
        let mut count = 0;
        while let Some(u) = queue.pop_front() {
            if dist[u] == h {
                continue;
            }
            for w in 0..n {
                if w != u && self.adjacency[(u, w)] != 0.0 && dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count
    }

    /// Whether all vertices lie in one component (true for `n <= 1`).
    pub fn is_connected(&self) -> bool {
        self.n() <= 1 || self.hop_neighborhood_size(0, self.n()) == self.n() - 1
    }
}
