//! DP-SGD over the APPR-weighted model: column-clip Π, per-node gradient
//! clipping, one Gaussian draw per coordinate per step.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accountant::{calibrate_sigma, sgd_account, PrivacyBudget, SgdAccountParams};
use crate::dp_appr::ApprMatrix;
use crate::dp_appr::noise::sample_gaussian;
use crate::error::{DparError, Result};
use crate::graph::DatasetSplit;
use crate::model::{loss_and_grad, MlpParams};
use crate::rng::{SeedStreams, STREAM_BATCH, STREAM_SGD_NOISE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseSetting {
    /// Noise multiplier given directly.
    Sigma(f64),
    /// Smallest σ meeting this ε_sgd.
    TargetEpsilon(f64),
    /// Plain SGD: no noise, no gradient clipping, no privacy claim.
    NonPrivate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Per-node gradient ℓ2 bound C.
    pub clip_grad: f64,
    /// Column ℓ1 bound τ of the APPR matrix.
    pub tau: f64,
    pub noise: NoiseSetting,
    pub delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            batch: 60,
            epochs: 200,
            clip_grad: 1.0,
            tau: 1.0,
            noise: NoiseSetting::NonPrivate,
            delta: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, m: usize) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(DparError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch == 0 || self.batch > m {
            return Err(DparError::Config(format!("batch must be in 1..={m}, got {}", self.batch)));
        }
        if !(self.clip_grad > 0.0) {
            return Err(DparError::Config(format!("clip_grad must be positive, got {}", self.clip_grad)));
        }
        if !(self.tau > 0.0) {
            return Err(DparError::Config(format!("tau must be positive, got {}", self.tau)));
        }
        match self.noise {
            NoiseSetting::Sigma(s) if !(s >= 0.0 && s.is_finite()) => {
                return Err(DparError::Config(format!("sigma must be finite and >= 0, got {s}")));
            }
            NoiseSetting::TargetEpsilon(e) if !(e > 0.0) => {
                return Err(DparError::Config(format!("target epsilon must be positive, got {e}")));
            }
            _ => {}
        }
        if self.noise != NoiseSetting::NonPrivate && !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(DparError::Config(format!("delta must be in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }

    /// `T = epochs · ⌈M/B⌉`.
    pub fn steps(&self, m: usize) -> usize {
        self.epochs * m.div_ceil(self.batch)
    }
}

/// Scales every column with ℓ1 norm above `tau` down to exactly `tau` (or
/// the nearest float below).
pub fn clip_columns(pi: &ApprMatrix, tau: f64) -> ApprMatrix {
    let norms = pi.column_l1_norms();
    let mut scale: Vec<f64> = norms.iter().map(|&n| if n > tau { tau / n } else { 1.0 }).collect();
    loop {
        let mut out = pi.clone();
        for row in &mut out.rows {
            for e in &mut row.entries {
                e.1 *= scale[e.0];
            }
        }
        let after = out.column_l1_norms();
        let mut ok = true;
        for (j, &n) in after.iter().enumerate() {
            if n > tau {
                scale[j] *= 1.0 - f64::EPSILON;
                ok = false;
            }
        }
        if ok {
            return out;
        }
    }
}

/// Row indices (into `V_M`) of each step's batch: `batch` distinct rows drawn
/// uniformly for every step, sorted.
pub fn batch_schedule<R: Rng + ?Sized>(m: usize, batch: usize, steps: usize, rng: &mut R) -> Vec<Vec<usize>> {
    (0..steps)
        .map(|_| {
            let mut b = index::sample(rng, m, batch).into_vec();
            b.sort_unstable();
            b
        })
        .collect()
}

/// Adds `N(0, std²)` to every coordinate.
pub fn add_gaussian_noise<R: Rng + ?Sized>(values: &mut [f64], std: f64, rng: &mut R) {
    if std == 0.0 {
        return;
    }
    for v in values {
        *v += sample_gaussian(std, rng);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub mean_loss: f64,
    pub grad_norm_mean: f64,
    pub grad_norm_max: f64,
    /// Largest norm entering the sum, after clipping.
    pub clipped_norm_max: f64,
    pub clipped_fraction: f64,
    /// ε_sgd spent after this step; absent without noise.
    pub epsilon: Option<f64>,
}

/// Everything about a finished run except the parameters and history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    /// `(ε_sgd, δ_sgd)`; `None` for non-private training.
    pub spent: Option<PrivacyBudget>,
    pub sigma: f64,
    pub q: f64,
    pub steps: usize,
    pub batch: usize,
    /// Column bound applied; `None` when training without clipping.
    pub tau: Option<f64>,
    pub clip_grad: Option<f64>,
    /// Largest column ℓ1 norm of the matrix actually trained on.
    pub max_column_l1: f64,
    pub lambda_cap_hit: bool,
    pub sigma_exceeds_tau: bool,
    /// Every APPR row was the one-hot vector of its own node.
    pub rows_one_hot_self: bool,
    /// Largest per-node gradient norm that entered any sum.
    pub max_clipped_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MlpParams,
    pub history: Vec<StepRecord>,
    pub summary: TrainSummary,
}

impl TrainOutcome {
    /// Writes the history as JSON lines.
    pub fn write_log(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| DparError::io(path, e))?;
        let mut w = BufWriter::new(file);
        for rec in &self.history {
            serde_json::to_writer(&mut w, rec).map_err(|e| DparError::Json {
                path: path.to_path_buf(),
                source: e,
            })?;
            w.write_all(b"\n").map_err(|e| DparError::io(path, e))?;
        }
        w.flush().map_err(|e| DparError::io(path, e))
    }
}

/// Sampling ratio used by the accountant: batch size over the number of
/// nodes in the training graph.
pub fn sampling_ratio(batch: usize, n_nodes: usize) -> f64 {
    batch as f64 / n_nodes as f64
}

/// Resolves the noise multiplier for `cfg`, calibrating when asked to.
pub fn resolve_sigma(cfg: &TrainConfig, q: f64, steps: usize) -> Result<f64> {
    match cfg.noise {
        NoiseSetting::Sigma(s) => Ok(s),
        NoiseSetting::TargetEpsilon(eps) => calibrate_sigma(eps, q, cfg.tau, steps, cfg.delta),
        NoiseSetting::NonPrivate => Ok(0.0),
    }
}

pub fn train(
    split: &DatasetSplit,
    pi: &ApprMatrix,
    init: MlpParams,
    cfg: &TrainConfig,
    streams: &SeedStreams,
) -> Result<TrainOutcome> {
    let g = &split.train_graph;
    let m = split.v_m.len();
    if pi.n_rows() != m || pi.n_cols != g.n_nodes() {
        return Err(DparError::Dimension(format!(
            "APPR matrix is {}×{}, split needs {}×{}",
            pi.n_rows(),
            pi.n_cols,
            m,
            g.n_nodes()
        )));
    }
    if let Some((i, row)) = pi.rows.iter().enumerate().find(|(i, r)| r.source != split.v_m[*i]) {
        return Err(DparError::Dimension(format!(
            "APPR row {i} has source {} but v_m[{i}] = {}",
            row.source, split.v_m[i]
        )));
    }
    cfg.validate(m)?;

    let private = cfg.noise != NoiseSetting::NonPrivate;
    let steps = cfg.steps(m);
    let q = sampling_ratio(cfg.batch, g.n_nodes());
    let sigma = resolve_sigma(cfg, q, steps)?;
    let (clip, tau) = if private {
        (cfg.clip_grad, cfg.tau)
    } else {
        (f64::INFINITY, f64::INFINITY)
    };

    let pi = if tau.is_finite() { clip_columns(pi, tau) } else { pi.clone() };
    let max_column_l1 = pi.max_column_l1();
    assert!(max_column_l1 <= tau, "column clip left a column at {max_column_l1} > {tau}");

    let account = |t: usize| {
        sgd_account(&SgdAccountParams {
            q,
            tau: cfg.tau,
            sigma,
            steps: t,
            delta: cfg.delta,
        })
    };
    let charges = private && sigma > 0.0;
    if private && sigma == 0.0 {
        log::warn!("sigma = 0 with clipping on: no privacy guarantee is reported");
    }

    let mut batch_rng = streams.stream(STREAM_BATCH);
    let mut noise_rng = streams.stream(STREAM_SGD_NOISE);
    let schedule = batch_schedule(m, cfg.batch, steps, &mut batch_rng);

    let mut params = init;
    let mut history = Vec::with_capacity(steps);
    let noise_std = sigma * clip;
    for (t, batch) in schedule.iter().enumerate() {
        let grads = batch
            .par_iter()
            .map(|&i| {
                let node = split.v_m[i];
                loss_and_grad(&params, g, node, &pi.rows[i], g.label(node))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut sum = vec![0.0; params.n_params()];
        let (mut loss_sum, mut norm_sum, mut norm_max, mut clipped_max, mut n_clipped) = (0.0, 0.0, 0.0f64, 0.0f64, 0);
        for (loss, mut grad) in grads {
            if !loss.is_finite() || !grad.norm.is_finite() {
                return Err(DparError::Numeric(format!(
                    "step {t}: non-finite loss {loss} or gradient norm {} at node {}",
                    grad.norm, grad.node
                )));
            }
            loss_sum += loss;
            norm_sum += grad.norm;
            norm_max = norm_max.max(grad.norm);
            if grad.clip(clip) > 1.0 {
                n_clipped += 1;
            }
            debug_assert!(grad.norm <= clip);
            clipped_max = clipped_max.max(grad.norm);
            for (s, v) in sum.iter_mut().zip(&grad.values) {
                *s += v;
            }
        }
        if private {
            add_gaussian_noise(&mut sum, noise_std, &mut noise_rng);
        }
        let b = batch.len() as f64;
        for (p, s) in params.flat_mut().iter_mut().zip(&sum) {
            *p -= cfg.lr * s / b;
        }
        history.push(StepRecord {
            step: t + 1,
            mean_loss: loss_sum / b,
            grad_norm_mean: norm_sum / b,
            grad_norm_max: norm_max,
            clipped_norm_max: clipped_max,
            clipped_fraction: n_clipped as f64 / b,
            epsilon: charges.then(|| account(t + 1).epsilon),
        });
    }

    let rows_one_hot_self = pi.rows.iter().all(|r| r.entries.len() == 1 && r.entries[0].0 == r.source);
    let (spent, cap, over) = if charges {
        let acc = account(steps);
        if acc.sigma_exceeds_tau {
            log::warn!("sigma {sigma} > tau {}: moment bound used outside its derivation range", cfg.tau);
        }
        if acc.lambda_cap_hit {
            log::warn!("moment order hit the cap; epsilon may be loose");
        }
        (
            Some(PrivacyBudget {
                epsilon: acc.epsilon,
                delta: cfg.delta,
            }),
            acc.lambda_cap_hit,
            acc.sigma_exceeds_tau,
        )
    } else {
        (None, false, false)
    };

    let max_clipped_norm = history.iter().map(|r| r.clipped_norm_max).fold(0.0, f64::max);
    Ok(TrainOutcome {
        params,
        history,
        summary: TrainSummary {
            spent,
            sigma,
            q,
            steps,
            batch: cfg.batch,
            tau: private.then_some(tau),
            clip_grad: private.then_some(clip),
            max_column_l1,
            lambda_cap_hit: cap,
            sigma_exceeds_tau: over,
            rows_one_hot_self,
            max_clipped_norm,
        },
    })
}
