//! Immutable attributed graphs: undirected CSR adjacency, dense features and
//! class labels.

mod io;
mod sbm;
mod split;

pub use io::{load_graph, save_graph};
pub use sbm::{generate_sbm, SbmParams};
pub use split::{inductive_split, DatasetSplit, SplitManifest, SplitSpec};

use crate::error::{DparError, Result};

/// Undirected graph with node features and labels.
///
/// Both directions of every edge are stored; rows of the adjacency are sorted
/// and free of duplicates and self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    features: Vec<f64>,
    labels: Vec<usize>,
    feature_dim: usize,
    n_classes: usize,
}

impl Graph {
    /// Builds a validated graph. Edges are symmetrized and deduplicated,
    /// self-loops are dropped. `features` is row-major `n_nodes × feature_dim`.
    pub fn from_edges(
        n_nodes: usize,
        edges: &[(usize, usize)],
        features: Vec<f64>,
        feature_dim: usize,
        labels: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self> {
        if features.len() != n_nodes * feature_dim {
            return Err(DparError::Dimension(format!(
                "expected {} feature values ({} nodes x {} dims), got {}",
                n_nodes * feature_dim,
                n_nodes,
                feature_dim,
                features.len()
            )));
        }
        if labels.len() != n_nodes {
            return Err(DparError::Dimension(format!(
                "expected {} labels, got {}",
                n_nodes,
                labels.len()
            )));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= n_classes) {
            return Err(DparError::Dimension(format!(
                "label {y} of node {i} outside [0, {n_classes})"
            )));
        }
        if let Some(&(u, v)) = edges.iter().find(|(u, v)| *u >= n_nodes || *v >= n_nodes) {
            return Err(DparError::Dimension(format!(
                "edge ({u}, {v}) references a node beyond {n_nodes} nodes"
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(DparError::Numeric("non-finite feature value".into()));
        }

        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
        for &(u, v) in edges {
            if u != v {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
        let mut offsets = Vec::with_capacity(n_nodes + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for row in &mut adj {
            row.sort_unstable();
            row.dedup();
            neighbors.extend_from_slice(row);
            offsets.push(neighbors.len());
        }

        Ok(Self {
            offsets,
            neighbors,
            features,
            labels,
            feature_dim,
            n_classes,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    /// Number of undirected edges.
    pub fn n_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n_nodes()).map(|v| self.degree(v)).collect()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    pub fn features(&self, node: usize) -> &[f64] {
        let d = self.feature_dim;
        &self.features[node * d..(node + 1) * d]
    }

    pub fn feature_matrix(&self) -> &[f64] {
        &self.features
    }

    pub fn label(&self, node: usize) -> usize {
        self.labels[node]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`.
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.n_edges());
        for u in 0..self.n_nodes() {
            for &v in self.neighbors(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Subgraph induced on `nodes`; node `i` of the result is `nodes[i]` of
    /// `self`. Only edges with both endpoints in `nodes` survive. The class
    /// count is kept so labels stay comparable across splits.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<Graph> {
        let mut index = vec![usize::MAX; self.n_nodes()];
        for (i, &v) in nodes.iter().enumerate() {
            if v >= self.n_nodes() {
                return Err(DparError::Dimension(format!(
                    "node {v} beyond {} nodes",
                    self.n_nodes()
                )));
            }
            if index[v] != usize::MAX {
                return Err(DparError::Config(format!("node {v} listed twice")));
            }
            index[v] = i;
        }
        let mut edges = Vec::new();
        let mut features = Vec::with_capacity(nodes.len() * self.feature_dim);
        let mut labels = Vec::with_capacity(nodes.len());
        for (i, &v) in nodes.iter().enumerate() {
            for &w in self.neighbors(v) {
                let j = index[w];
                if j != usize::MAX && i < j {
                    edges.push((i, j));
                }
            }
            features.extend_from_slice(self.features(v));
            labels.push(self.labels[v]);
        }
        Graph::from_edges(
            nodes.len(),
            &edges,
            features,
            self.feature_dim,
            labels,
            self.n_classes,
        )
    }
}
