//! Test-time prediction by power iteration over the test graph, accuracy,
//! and embedding export.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DparError, Result};
use crate::graph::Graph;
use crate::model::{encode_all, softmax, MlpParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub power_iters: usize,
    pub alpha: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            power_iters: 2,
            alpha: 0.25,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(DparError::Config(format!("eval alpha must be in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// `Q⁰ = H`, `Qᵖ = (1−α) D⁻¹A Qᵖ⁻¹ + α H`, rows of degree-0 nodes of `D⁻¹`
/// being zero. Returns `Q^P`, row-major `n × c`.
pub fn power_iteration_logits(h: &[f64], g: &Graph, c: usize, cfg: &EvalConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = g.n_nodes();
    if h.len() != n * c {
        return Err(DparError::Dimension(format!("H has {} entries, expected {n}×{c}", h.len())));
    }
    let mut q = h.to_vec();
    let mut next = vec![0.0; n * c];
    for _ in 0..cfg.power_iters {
        for v in 0..n {
            let out = &mut next[v * c..(v + 1) * c];
            for (o, &hv) in out.iter_mut().zip(&h[v * c..(v + 1) * c]) {
                *o = cfg.alpha * hv;
            }
            let nbrs = g.neighbors(v);
            if nbrs.is_empty() {
                continue;
            }
            let w = (1.0 - cfg.alpha) / nbrs.len() as f64;
            for &u in nbrs {
                for (o, &qu) in out.iter_mut().zip(&q[u * c..(u + 1) * c]) {
                    *o += w * qu;
                }
            }
        }
        std::mem::swap(&mut q, &mut next);
    }
    Ok(q)
}

/// Per-node class probabilities after `P` power-iteration steps.
pub fn power_iteration_predict(model: &MlpParams, test_graph: &Graph, cfg: &EvalConfig) -> Result<Vec<Vec<f64>>> {
    let c = model.n_classes();
    let h = encode_all(model, test_graph)?;
    let q = power_iteration_logits(&h, test_graph, c, cfg)?;
    Ok(q.chunks(c).map(softmax).collect())
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(predictions: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(DparError::Dimension(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(DparError::Config("accuracy of an empty set is undefined".into()));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, &y)| argmax(p) == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// CSV of encoder outputs with header `h0,..,h{c-1},label`.
pub fn export_embeddings(model: &MlpParams, graph: &Graph, path: &Path) -> Result<()> {
    let c = model.n_classes();
    let h = encode_all(model, graph)?;
    let mut out = String::new();
    for j in 0..c {
        let _ = write!(out, "h{j},");
    }
    out.push_str("label\n");
    for (v, row) in h.chunks(c).enumerate() {
        for x in row {
            let _ = write!(out, "{x:?},");
        }
        let _ = writeln!(out, "{}", graph.label(v));
    }
    fs::write(path, out).map_err(|e| DparError::io(path, e))
}
