//! Inductive train/test split with Bernoulli node subsampling of the
//! training side.

use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{DparError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    /// Per-node inclusion probability for the training subgraph.
    pub q_prime: f64,
    /// Number of nodes that receive a private APPR row.
    pub m: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            q_prime: 0.09,
            m: 70,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(DparError::Config(format!(
                "train_fraction must be in (0, 1], got {}",
                self.train_fraction
            )));
        }
        if !(self.q_prime > 0.0 && self.q_prime <= 1.0) {
            return Err(DparError::Config(format!(
                "q_prime must be in (0, 1], got {}",
                self.q_prime
            )));
        }
        if self.m == 0 {
            return Err(DparError::Config("m must be positive".into()));
        }
        Ok(())
    }
}

/// Training and test views of one graph. No edge crosses the two views.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train_graph: Graph,
    pub test_graph: Graph,
    /// Rows of the APPR matrix, as indices into `train_graph`.
    pub v_m: Vec<usize>,
    /// Original id of each `train_graph` node.
    pub train_ids: Vec<usize>,
    /// Original id of each `test_graph` node.
    pub test_ids: Vec<usize>,
    pub spec: SplitSpec,
}

/// Replayable record of a split. Together with the source graph it rebuilds
/// the identical [`DatasetSplit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub train_fraction: f64,
    pub q_prime: f64,
    pub m: usize,
    pub n_nodes: usize,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub v_m: Vec<usize>,
}

/// Partitions nodes into train/test, drops every cross edge, keeps each
/// training node independently with probability `q_prime` and then picks `m`
/// distinct rows uniformly from the retained nodes.
pub fn inductive_split(graph: &Graph, spec: &SplitSpec) -> Result<DatasetSplit> {
    spec.validate()?;
    let n = graph.n_nodes();
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let n_train = ((spec.train_fraction * n as f64).round() as usize).min(n);
    let mut train_all = perm[..n_train].to_vec();
    let mut test_ids = perm[n_train..].to_vec();
    train_all.sort_unstable();
    test_ids.sort_unstable();

    let train_ids: Vec<usize> = train_all
        .into_iter()
        .filter(|_| rng.random::<f64>() < spec.q_prime)
        .collect();
    if train_ids.len() < spec.m {
        return Err(DparError::Config(format!(
            "only {} training nodes survived sampling at q_prime={}, need m={}",
            train_ids.len(),
            spec.q_prime,
            spec.m
        )));
    }
    let v_m = index::sample(&mut rng, train_ids.len(), spec.m).into_vec();

    Ok(DatasetSplit {
        train_graph: graph.induced_subgraph(&train_ids)?,
        test_graph: graph.induced_subgraph(&test_ids)?,
        v_m,
        train_ids,
        test_ids,
        spec: *spec,
    })
}

impl DatasetSplit {
    pub fn manifest(&self, source_nodes: usize) -> SplitManifest {
        SplitManifest {
            seed: self.spec.seed,
            train_fraction: self.spec.train_fraction,
            q_prime: self.spec.q_prime,
            m: self.spec.m,
            n_nodes: source_nodes,
            train_ids: self.train_ids.clone(),
            test_ids: self.test_ids.clone(),
            v_m: self.v_m.clone(),
        }
    }

    /// Rebuilds a split from its manifest and the graph it was drawn from.
    pub fn from_manifest(graph: &Graph, manifest: &SplitManifest) -> Result<Self> {
        if manifest.n_nodes != graph.n_nodes() {
            return Err(DparError::Dimension(format!(
                "manifest was drawn from {} nodes, graph has {}",
                manifest.n_nodes,
                graph.n_nodes()
            )));
        }
        if manifest.v_m.len() != manifest.m
            || manifest.v_m.iter().any(|&i| i >= manifest.train_ids.len())
        {
            return Err(DparError::Config("manifest v_m is inconsistent".into()));
        }
        let mut seen = vec![false; graph.n_nodes()];
        for &v in manifest.train_ids.iter().chain(&manifest.test_ids) {
            if v >= graph.n_nodes() || std::mem::replace(&mut seen[v], true) {
                return Err(DparError::Config(format!(
                    "manifest node {v} is out of range or appears in both partitions"
                )));
            }
        }
        Ok(Self {
            train_graph: graph.induced_subgraph(&manifest.train_ids)?,
            test_graph: graph.induced_subgraph(&manifest.test_ids)?,
            v_m: manifest.v_m.clone(),
            train_ids: manifest.train_ids.clone(),
            test_ids: manifest.test_ids.clone(),
            spec: SplitSpec {
                train_fraction: manifest.train_fraction,
                q_prime: manifest.q_prime,
                m: manifest.m,
                seed: manifest.seed,
            },
        })
    }
}

impl SplitManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|source| DparError::Json {
            path: path.into(),
            source,
        })?;
        fs::write(path, text).map_err(|e| DparError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DparError::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| DparError::Json {
            path: path.into(),
            source,
        })
    }
}
