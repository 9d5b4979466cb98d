//! Approximate personalized PageRank via proximal gradient (ISTA) on the
//! ℓ1-regularized variational form.
//!
//! With the lazy walk `W = ½(I + A D⁻¹)`, the PPR vector of source `s` solves
//! `π = α e_s + (1−α) W π`. Substituting `π = D^{1/2} q` turns this into the
//! stationarity condition of
//!
//! ```text
//! min_{q ≥ 0}  ½ qᵀQq − α (D^{-1/2} e_s)ᵀ q + ρ α ‖D^{1/2} q‖₁
//! Q = αI + (1−α)/2 · (I − D^{-1/2} A D^{-1/2})
//! ```
//!
//! whose proximal step is a nonnegative soft-threshold with per-coordinate
//! threshold `η ρ α √d_i`. Only coordinates in the support and its
//! neighbourhood are touched, so an iteration costs the volume of the support
//! rather than the size of the graph.

mod dense;

pub use dense::{solve_ppr_dense, DENSE_SIZE_LIMIT};

use serde::{Deserialize, Serialize};

use crate::error::{DparError, Result};
use crate::graph::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApprParams {
    /// Teleport probability.
    pub alpha: f64,
    /// Sparsity regularization.
    pub rho: f64,
    /// Relative ℓ1 change at which iteration stops.
    pub gamma: f64,
    pub max_iters: usize,
}

impl Default for ApprParams {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            rho: 1e-4,
            gamma: 1e-4,
            max_iters: 10_000,
        }
    }
}

impl ApprParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(DparError::Config(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(DparError::Config(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(DparError::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.max_iters == 0 {
            return Err(DparError::Config("max_iters must be positive".into()));
        }
        Ok(())
    }
}

/// Sparse nonnegative vector over the nodes of a graph, owned by `source`.
/// Entries are sorted by index.
#[derive(Debug, Clone, PartialEq)]
pub struct ApprVector {
    pub source: usize,
    pub entries: Vec<(usize, f64)>,
}

impl ApprVector {
    pub fn one_hot(source: usize) -> Self {
        Self {
            source,
            entries: vec![(source, 1.0)],
        }
    }

    /// Builds from arbitrary entries; sorts by index.
    pub fn from_entries(source: usize, mut entries: Vec<(usize, f64)>) -> Self {
        entries.sort_by_key(|&(i, _)| i);
        Self { source, entries }
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map_or(0.0, |k| self.entries[k].1)
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn l1_norm(&self) -> f64 {
        self.entries.iter().map(|(_, x)| x.abs()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.entries.iter().map(|(_, x)| x * x).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for &(i, x) in &self.entries {
            out[i] = x;
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            source: self.source,
            entries: self.entries.iter().map(|&(i, x)| (i, x * factor)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    /// Stopped at `max_iters`; the last iterate is returned.
    MaxIters,
    /// Degree-0 source; the teleport-only vector `e_source` is returned.
    IsolatedSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApprSolution {
    pub vector: ApprVector,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Final step size; below `1/(1+α)` only if divergence backoff fired.
    pub step: f64,
}

struct Ctx<'a> {
    g: &'a Graph,
    source: usize,
    alpha: f64,
    rho: f64,
    sqrt_deg: Vec<f64>,
}

impl Ctx<'_> {
    fn b(&self, i: usize) -> f64 {
        if i == self.source {
            self.alpha / self.sqrt_deg[i]
        } else {
            0.0
        }
    }

    /// `(D^{-1/2} A D^{-1/2} q)_i`, reading the dense iterate.
    fn normalized_adj(&self, q: &[f64], i: usize) -> f64 {
        let s: f64 = self
            .g
            .neighbors(i)
            .iter()
            .map(|&j| q[j] / self.sqrt_deg[j])
            .sum();
        s / self.sqrt_deg[i]
    }

    fn qq(&self, q: &[f64], i: usize) -> f64 {
        0.5 * (1.0 + self.alpha) * q[i] - 0.5 * (1.0 - self.alpha) * self.normalized_adj(q, i)
    }

    fn objective(&self, q: &[f64], support: &[usize]) -> f64 {
        support
            .iter()
            .map(|&i| {
                0.5 * q[i] * self.qq(q, i) - self.b(i) * q[i]
                    + self.rho * self.alpha * self.sqrt_deg[i] * q[i]
            })
            .sum()
    }
}

/// ISTA on the variational APPR objective, returning `p = D^{1/2} q`.
pub fn solve_appr_ista(g: &Graph, source: usize, params: &ApprParams) -> Result<ApprSolution> {
    params.validate()?;
    let n = g.n_nodes();
    if source >= n {
        return Err(DparError::Dimension(format!("source {source} beyond {n} nodes")));
    }
    let step0 = 1.0 / (1.0 + params.alpha);
    if g.degree(source) == 0 {
        return Ok(ApprSolution {
            vector: ApprVector::one_hot(source),
            status: SolveStatus::IsolatedSource,
            iterations: 0,
            step: step0,
        });
    }

    let ctx = Ctx {
        g,
        source,
        alpha: params.alpha,
        rho: params.rho,
        sqrt_deg: (0..n).map(|i| (g.degree(i) as f64).sqrt()).collect(),
    };

    let mut q = vec![0.0; n];
    let mut in_cand = vec![false; n];
    let mut support: Vec<usize> = Vec::new();
    let mut cand: Vec<usize> = Vec::new();
    let mut proposal: Vec<(usize, f64, f64)> = Vec::new();
    let mut step = step0;
    let mut f_old: f64 = 0.0;
    let mut status = SolveStatus::MaxIters;
    let mut iterations = 0;

    while iterations < params.max_iters {
        iterations += 1;

        // Gradient is nonzero only on support ∪ N(support) ∪ {source}.
        cand.clear();
        let mut push = |i: usize, cand: &mut Vec<usize>| {
            if !in_cand[i] {
                in_cand[i] = true;
                cand.push(i);
            }
        };
        push(source, &mut cand);
        for &j in &support {
            push(j, &mut cand);
            for &i in g.neighbors(j) {
                push(i, &mut cand);
            }
        }
        cand.sort_unstable();

        proposal.clear();
        let mut diff = 0.0;
        let mut norm_old = 0.0;
        for &i in &cand {
            in_cand[i] = false;
            let grad = ctx.qq(&q, i) - ctx.b(i);
            let threshold = step * params.rho * params.alpha * ctx.sqrt_deg[i];
            let next = (q[i] - step * grad - threshold).max(0.0);
            diff += (next - q[i]).abs();
            norm_old += q[i];
            proposal.push((i, q[i], next));
        }

        for &(i, _, next) in &proposal {
            q[i] = next;
        }
        let new_support: Vec<usize> = proposal
            .iter()
            .filter(|&&(_, _, next)| next > 0.0)
            .map(|&(i, _, _)| i)
            .collect();
        let f_new = ctx.objective(&q, &new_support);
        if !f_new.is_finite() || f_new > f_old + 1e-12 * f_old.abs().max(1e-300) {
            for &(i, old, _) in &proposal {
                q[i] = old;
            }
            step *= 0.5;
            log::warn!("ISTA objective increased at iteration {iterations}; step halved to {step}");
            continue;
        }
        f_old = f_new;
        support = new_support;

        if norm_old > 0.0 && diff <= params.gamma * norm_old {
            status = SolveStatus::Converged;
            break;
        }
    }
    if status == SolveStatus::MaxIters {
        log::warn!(
            "ISTA for source {source} hit max_iters={} without converging",
            params.max_iters
        );
    }

    let entries = support
        .iter()
        .map(|&i| (i, q[i] * ctx.sqrt_deg[i]))
        .collect();
    Ok(ApprSolution {
        vector: ApprVector::from_entries(source, entries),
        status,
        iterations,
        step,
    })
}
