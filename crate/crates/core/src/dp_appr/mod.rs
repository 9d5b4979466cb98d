//! Private, top-K sparsified APPR matrices.
//!
//! Every way of turning the APPR vectors of the sampled rows into the matrix
//! used for training is an [`ApprMechanism`]. Mechanisms are registered by
//! name in a [`MechanismRegistry`] and built from a [`MechanismRequest`] that
//! carries the structure-stage budget; each mechanism calibrates its own
//! noise from that budget.

mod baseline;
mod em;
mod gm;
mod io;
pub mod noise;
mod registry;

pub use baseline::{FeaturesOnly, NonPrivateTopK};
pub use em::{clipped_utilities, em_select, EmConfig, EmOption, ExponentialMechanism};
pub use gm::{gm_select, GaussianMechanism, GmConfig};
pub use io::{read_appr_matrix, write_appr_matrix};
pub use registry::{MechanismInfo, MechanismRegistry, MechanismRequest};

use rayon::prelude::*;

use crate::accountant::PrivacyBudget;
use crate::appr::{solve_appr_ista, ApprParams, ApprVector};
use crate::error::{DparError, Result};
use crate::graph::Graph;
use crate::rng::{NoiseRng, StreamRng};

/// One strategy for producing a row of the training APPR matrix.
pub trait ApprMechanism: Send + Sync {
    fn name(&self) -> &str;

    /// Maximum nonzeros per output row.
    fn k(&self) -> usize;

    /// Budget spent by a matrix of `m` rows; `None` for a non-private
    /// mechanism.
    fn budget(&self, m: usize) -> Result<Option<PrivacyBudget>>;

    /// Whether rows need the source's APPR vector at all.
    fn uses_appr(&self) -> bool {
        true
    }

    /// Named noise parameters, for reports.
    fn noise_scales(&self) -> Vec<(&'static str, f64)> {
        Vec::new()
    }

    /// Output row for `appr` over `n_cols` candidate columns.
    fn privatize_row(&self, appr: &ApprVector, n_cols: usize, rng: &mut StreamRng) -> Result<ApprVector>;
}

/// `M × N` sparse matrix, one row per sampled node in `v_m` order. Columns
/// index training-graph nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ApprMatrix {
    pub rows: Vec<ApprVector>,
    pub n_cols: usize,
    pub k: usize,
    pub mechanism: String,
    pub spent: Option<PrivacyBudget>,
    pub seed: u64,
}

impl ApprMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// ℓ1 norm of every column.
    pub fn column_l1_norms(&self) -> Vec<f64> {
        let mut norms = vec![0.0; self.n_cols];
        for row in &self.rows {
            for &(j, x) in &row.entries {
                norms[j] += x.abs();
            }
        }
        norms
    }

    pub fn max_column_l1(&self) -> f64 {
        self.column_l1_norms().into_iter().fold(0.0, f64::max)
    }
}

/// Entrywise clip: `x / max(1, |x|/c)`.
pub fn clip_entrywise(v: &ApprVector, c: f64) -> ApprVector {
    ApprVector {
        source: v.source,
        entries: v
            .entries
            .iter()
            .map(|&(i, x)| (i, if x.abs() > c { c.copysign(x) } else { x }))
            .collect(),
    }
}

/// ℓ2 clip: `v / max(1, ‖v‖₂/c)`.
pub fn clip_l2(v: &ApprVector, c: f64) -> ApprVector {
    let factor = (v.l2_norm() / c).max(1.0);
    if factor == 1.0 {
        return v.clone();
    }
    v.scaled(1.0 / factor)
}

/// Indices of the `k` largest values, ties to the lowest index, returned in
/// ascending index order.
pub fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let k = k.min(values.len());
    if k == 0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    let order = |a: &usize, b: &usize| values[*b].total_cmp(&values[*a]).then(a.cmp(b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, order);
        idx.truncate(k);
    }
    idx.sort_unstable();
    idx
}

/// Runs `mechanism` over the rows `v_m` of `g`. Row `i` draws from noise
/// stream `i`, so the result does not depend on scheduling.
pub fn build_appr_matrix(
    mechanism: &dyn ApprMechanism,
    g: &Graph,
    v_m: &[usize],
    params: &ApprParams,
    noise: NoiseRng,
) -> Result<ApprMatrix> {
    let n = g.n_nodes();
    if mechanism.k() > n {
        return Err(DparError::Config(format!(
            "k = {} exceeds the {} candidate columns",
            mechanism.k(),
            n
        )));
    }
    params.validate()?;
    let rows = v_m
        .par_iter()
        .enumerate()
        .map(|(i, &source)| {
            if source >= n {
                return Err(DparError::Dimension(format!("row source {source} beyond {n} nodes")));
            }
            let appr = if mechanism.uses_appr() {
                solve_appr_ista(g, source, params)?.vector
            } else {
                ApprVector::one_hot(source)
            };
            let mut rng = noise.row(i as u64);
            mechanism.privatize_row(&appr, n, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ApprMatrix {
        rows,
        n_cols: n,
        k: mechanism.k(),
        mechanism: mechanism.name().to_string(),
        spent: mechanism.budget(v_m.len())?,
        seed: noise.seed(),
    })
}

/// Exponential-mechanism APPR matrix (option I or II).
pub fn dp_appr_em(g: &Graph, v_m: &[usize], params: &ApprParams, cfg: &EmConfig, noise: NoiseRng) -> Result<ApprMatrix> {
    build_appr_matrix(&ExponentialMechanism::new(*cfg)?, g, v_m, params, noise)
}

/// Gaussian-mechanism APPR matrix.
pub fn dp_appr_gm(g: &Graph, v_m: &[usize], params: &ApprParams, cfg: &GmConfig, noise: NoiseRng) -> Result<ApprMatrix> {
    build_appr_matrix(&GaussianMechanism::new(*cfg)?, g, v_m, params, noise)
}
