use rand::Rng;
use serde::{Deserialize, Serialize};

use super::noise::sample_gaussian;
use super::{clip_l2, top_k_indices, ApprMechanism};
use crate::accountant::{gaussian_sigma, gm_matrix_budget, PrivacyBudget};
use crate::appr::ApprVector;
use crate::error::{DparError, Result};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmConfig {
    /// Per-row ε.
    pub eps: f64,
    pub delta: f64,
    /// ℓ2 clip bound C₁.
    pub clip: f64,
    pub k: usize,
}

impl GmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(DparError::Config(format!("GM eps must be positive and finite, got {}", self.eps)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(DparError::Config(format!("GM delta must be in (0, 1), got {}", self.delta)));
        }
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return Err(DparError::Config(format!("GM clip must be positive, got {}", self.clip)));
        }
        if self.k == 0 {
            return Err(DparError::Config("GM k must be positive".into()));
        }
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        gaussian_sigma(self.eps, self.delta, self.clip)
    }
}

/// Adds `N(0, σ²)` to every coordinate of the clipped dense row and keeps the
/// K largest noisy entries, floored at zero.
pub fn gm_select<R: Rng + ?Sized>(clipped: &[f64], cfg: &GmConfig, rng: &mut R) -> Vec<(usize, f64)> {
    let sigma = cfg.sigma();
    let noisy: Vec<f64> = clipped
        .iter()
        .map(|&x| x + sample_gaussian(sigma, rng))
        .collect();
    top_k_indices(&noisy, cfg.k)
        .into_iter()
        .map(|i| (i, noisy[i].max(0.0)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct GaussianMechanism {
    cfg: GmConfig,
}

impl GaussianMechanism {
    pub fn new(cfg: GmConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &GmConfig {
        &self.cfg
    }
}

impl ApprMechanism for GaussianMechanism {
    fn name(&self) -> &str {
        "gm"
    }

    fn k(&self) -> usize {
        self.cfg.k
    }

    fn budget(&self, m: usize) -> Result<Option<PrivacyBudget>> {
        gm_matrix_budget(&self.cfg, m).map(Some)
    }

    fn noise_scales(&self) -> Vec<(&'static str, f64)> {
        vec![("eps_row", self.cfg.eps), ("delta_row", self.cfg.delta), ("sigma", self.cfg.sigma())]
    }

    fn privatize_row(&self, appr: &ApprVector, n_cols: usize, rng: &mut StreamRng) -> Result<ApprVector> {
        let clipped = clip_l2(appr, self.cfg.clip);
        debug_assert!(clipped.l2_norm() <= self.cfg.clip * (1.0 + 1e-12));
        let entries = gm_select(&clipped.to_dense(n_cols), &self.cfg, rng);
        Ok(ApprVector::from_entries(appr.source, entries))
    }
}
