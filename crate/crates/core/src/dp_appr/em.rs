use rand::Rng;
use serde::{Deserialize, Serialize};

use super::noise::{sample_gumbel, sample_laplace};
use super::{clip_entrywise, top_k_indices, ApprMechanism};
use crate::accountant::{em_matrix_budget, PrivacyBudget};
use crate::appr::ApprVector;
use crate::error::{DparError, Result};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmOption {
    /// Option I: every selected index gets weight `1/K`.
    UniformWeights,
    /// Option II: selected indices keep their clipped value plus Laplace
    /// noise, paid for with `eps_values`.
    NoisyValues,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    /// ε of the one-shot Gumbel selection (noise scale `clip/eps`).
    pub eps: f64,
    /// ε spent on the reported values (option II only).
    pub eps_values: f64,
    pub delta: f64,
    /// Entrywise clip bound C₂.
    pub clip: f64,
    pub k: usize,
    pub option: EmOption,
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(DparError::Config(format!("EM eps must be positive and finite, got {}", self.eps)));
        }
        if !(self.eps_values >= 0.0 && self.eps_values.is_finite()) {
            return Err(DparError::Config(format!("EM eps_values must be >= 0, got {}", self.eps_values)));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(DparError::Config(format!("EM delta must be in (0, 1], got {}", self.delta)));
        }
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return Err(DparError::Config(format!("EM clip must be positive, got {}", self.clip)));
        }
        if self.k == 0 {
            return Err(DparError::Config("EM k must be positive".into()));
        }
        Ok(())
    }

    /// Gumbel scale β = C₂/ε.
    pub fn gumbel_scale(&self) -> f64 {
        self.clip / self.eps
    }

    /// Laplace scale K·C₂/ε₂ for option II.
    pub fn laplace_scale(&self) -> f64 {
        self.k as f64 * self.clip / self.eps_values
    }
}

/// Dense utility vector: APPR values clipped entrywise to `clip`, zero off
/// the support.
pub fn clipped_utilities(appr: &ApprVector, n_cols: usize, clip: f64) -> Vec<f64> {
    let u = clip_entrywise(appr, clip).to_dense(n_cols);
    debug_assert!(u.iter().all(|&x| x <= clip), "utility above clip bound");
    u
}

/// One-shot Gumbel top-K over every candidate column, followed by the
/// option I/II value report. Returns the selected `(index, value)` pairs.
pub fn em_select<R: Rng + ?Sized>(utilities: &[f64], cfg: &EmConfig, rng: &mut R) -> Result<Vec<(usize, f64)>> {
    let beta = cfg.gumbel_scale();
    let noisy: Vec<f64> = utilities
        .iter()
        .map(|&u| u + sample_gumbel(beta, rng))
        .collect();
    let chosen = top_k_indices(&noisy, cfg.k);
    match cfg.option {
        EmOption::UniformWeights => {
            let w = 1.0 / cfg.k as f64;
            Ok(chosen.into_iter().map(|i| (i, w)).collect())
        }
        EmOption::NoisyValues => {
            if cfg.eps_values <= 0.0 {
                return Err(DparError::Config(
                    "option II needs eps_values > 0 to report values".into(),
                ));
            }
            let b = cfg.laplace_scale();
            Ok(chosen
                .into_iter()
                .map(|i| (i, (utilities[i] + sample_laplace(b, rng)).max(0.0)))
                .collect())
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExponentialMechanism {
    cfg: EmConfig,
}

impl ExponentialMechanism {
    pub fn new(cfg: EmConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &EmConfig {
        &self.cfg
    }
}

impl ApprMechanism for ExponentialMechanism {
    fn name(&self) -> &str {
        match self.cfg.option {
            EmOption::UniformWeights => "em0",
            EmOption::NoisyValues => "em1",
        }
    }

    fn k(&self) -> usize {
        self.cfg.k
    }

    fn budget(&self, m: usize) -> Result<Option<PrivacyBudget>> {
        em_matrix_budget(&self.cfg, m).map(Some)
    }

    fn noise_scales(&self) -> Vec<(&'static str, f64)> {
        let mut out = vec![
            ("eps_select", self.cfg.eps),
            ("gumbel_scale", self.cfg.gumbel_scale()),
            ("delta_row", self.cfg.delta),
        ];
        if self.cfg.option == EmOption::NoisyValues {
            out.push(("eps_values", self.cfg.eps_values));
            out.push(("laplace_scale", self.cfg.laplace_scale()));
        }
        out
    }

    fn privatize_row(&self, appr: &ApprVector, n_cols: usize, rng: &mut StreamRng) -> Result<ApprVector> {
        let u = clipped_utilities(appr, n_cols, self.cfg.clip);
        let entries = em_select(&u, &self.cfg, rng)?;
        Ok(ApprVector::from_entries(appr.source, entries))
    }
}
