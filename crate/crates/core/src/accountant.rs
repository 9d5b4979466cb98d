//! Privacy budget arithmetic for every stage of the pipeline.
//!
//! * per-row cost of one-shot Gumbel top-K selection,
//! * matrix-level optimal composition over `M` rows (and its inverse),
//! * the moments bound for DP-SGD with column-clipped APPR aggregation,
//! * linear subsampling amplification and the split between stages.

use serde::{Deserialize, Serialize};

use crate::dp_appr::{EmConfig, EmOption, GmConfig};
use crate::error::{DparError, Result};

/// Largest moment order scanned by [`sgd_epsilon`].
pub const LAMBDA_MAX: u32 = 512;

/// Largest noise multiplier [`calibrate_sigma`] will return.
pub const SIGMA_MAX: f64 = 1e6;

/// Node-level `(ε, δ)` guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(DparError::Config(format!("epsilon must be finite and >= 0, got {epsilon}")));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(DparError::Config(format!("delta must be in [0, 1), got {delta}")));
        }
        Ok(Self { epsilon, delta })
    }

    pub const fn zero() -> Self {
        Self { epsilon: 0.0, delta: 0.0 }
    }
}

/// Cost of reporting the top `k` indices after one-shot Gumbel noise of scale
/// `Δ/eps`:
/// `2·min{kε, kε(e^{2ε}−1)/(e^{2ε}+1) + ε√(2k ln(1/δ))}`.
pub fn em_topk_cost(eps: f64, k: usize, delta: f64) -> f64 {
    let k = k as f64;
    let basic = k * eps;
    let e2 = (2.0 * eps).exp();
    // The ratio tends to 1; past f64 range use the limit.
    let ratio = if e2.is_finite() { (e2 - 1.0) / (e2 + 1.0) } else { 1.0 };
    let advanced = k * eps * ratio + eps * (2.0 * k * (1.0 / delta).ln()).sqrt();
    2.0 * basic.min(advanced)
}

/// Inverse of [`em_topk_cost`] in `eps`: the per-candidate ε whose top-K cost
/// equals `row_cost`.
pub fn em_eps_for_cost(row_cost: f64, k: usize, delta: f64) -> Result<f64> {
    if !(row_cost > 0.0 && row_cost.is_finite()) {
        return Err(DparError::Budget(format!("row cost must be positive, got {row_cost}")));
    }
    let f = |e: f64| em_topk_cost(e, k, delta);
    Ok(invert_increasing(f, row_cost))
}

/// `x ↦ x / (2√(m ln(e + x/(2mδ))))`: the per-step ε that composes to `x`
/// over `m` steps with per-step δ.
fn per_step_from_total(total_eps: f64, m: usize, delta: f64) -> f64 {
    let m = m as f64;
    total_eps / (2.0 * (m * (std::f64::consts::E + total_eps / (2.0 * m * delta)).ln()).sqrt())
}

/// Bisection for an increasing `f` with `f(0) = 0`, returning `x` with
/// `f(x) = target` to near machine precision.
fn invert_increasing(f: impl Fn(f64) -> f64, target: f64) -> f64 {
    let mut hi = 1.0;
    while f(hi) < target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Composition of `m` mechanisms, each `(per_step_eps, delta)`-DP, into
/// `(ε_g, 2mδ)` where `per_step_eps = ε_g / (2√(m ln(e + ε_g/(2mδ))))`.
pub fn optimal_compose(per_step_eps: f64, m: usize, delta: f64) -> Result<PrivacyBudget> {
    if !(per_step_eps > 0.0 && per_step_eps.is_finite()) {
        return Err(DparError::Config(format!("per-step epsilon must be positive, got {per_step_eps}")));
    }
    if m == 0 {
        return Err(DparError::Config("composition needs m >= 1".into()));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(DparError::Config(format!("per-step delta must be in (0, 1], got {delta}")));
    }
    let eps_g = invert_increasing(|x| per_step_from_total(x, m, delta), per_step_eps);
    Ok(PrivacyBudget {
        epsilon: eps_g,
        delta: 2.0 * m as f64 * delta,
    })
}

/// Per-step ε such that `m` steps with per-step δ = `total.delta / (2m)`
/// compose to `total`. Closed form.
pub fn optimal_decompose(total: &PrivacyBudget, m: usize) -> Result<f64> {
    if !(total.epsilon > 0.0) || !(total.delta > 0.0) {
        return Err(DparError::Budget(format!(
            "cannot decompose ({}, {}): both must be positive",
            total.epsilon, total.delta
        )));
    }
    if m == 0 {
        return Err(DparError::Config("composition needs m >= 1".into()));
    }
    let delta = total.delta / (2.0 * m as f64);
    Ok(per_step_from_total(total.epsilon, m, delta))
}

/// Matrix-level budget of the exponential mechanism over `m` rows.
pub fn em_matrix_budget(cfg: &EmConfig, m: usize) -> Result<PrivacyBudget> {
    cfg.validate()?;
    let mut row = em_topk_cost(cfg.eps, cfg.k, cfg.delta);
    if cfg.option == EmOption::NoisyValues {
        row += cfg.eps_values;
    }
    optimal_compose(row, m, cfg.delta)
}

/// Matrix-level budget of the Gaussian mechanism over `m` rows. Independent
/// of `k`.
pub fn gm_matrix_budget(cfg: &GmConfig, m: usize) -> Result<PrivacyBudget> {
    cfg.validate()?;
    optimal_compose(cfg.eps, m, cfg.delta)
}

/// σ of the Gaussian mechanism: `√(2 ln(1.25/δ)) · sensitivity / ε`.
pub fn gaussian_sigma(eps: f64, delta: f64, sensitivity: f64) -> f64 {
    (2.0 * (1.25 / delta).ln()).sqrt() * sensitivity / eps
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdAccountParams {
    /// Batch sampling ratio `B/N`.
    pub q: f64,
    /// Column ℓ1 bound of the APPR matrix.
    pub tau: f64,
    /// Noise multiplier.
    pub sigma: f64,
    pub steps: usize,
    pub delta: f64,
}

impl SgdAccountParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(DparError::Config(format!("q must be in (0, 1], got {}", self.q)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(DparError::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(DparError::Config(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(DparError::Config(format!("delta must be in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }
}

/// Outcome of the moments-accountant minimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdAccount {
    pub epsilon: f64,
    pub lambda: u32,
    /// The minimizing order sits on [`LAMBDA_MAX`].
    pub lambda_cap_hit: bool,
    /// The moment bound was derived assuming `σ ≤ τ`.
    pub sigma_exceeds_tau: bool,
}

/// `ε = min_{λ ∈ 1..=512} (T q² τ² λ(λ+1)/σ² + ln(1/δ)) / λ`.
///
/// Uses the leading term of the log-moment bound; the `O(q³λ³/σ³)`
/// remainder is dropped.
pub fn sgd_account(p: &SgdAccountParams) -> SgdAccount {
    let log_inv_delta = (1.0 / p.delta).ln();
    let per_lambda = if p.steps == 0 {
        0.0
    } else {
        p.steps as f64 * p.q * p.q * p.tau * p.tau / (p.sigma * p.sigma)
    };
    let mut best = (f64::INFINITY, 1);
    for lambda in 1..=LAMBDA_MAX {
        let l = f64::from(lambda);
        let eps = (per_lambda * l * (l + 1.0) + log_inv_delta) / l;
        if eps < best.0 {
            best = (eps, lambda);
        }
    }
    SgdAccount {
        epsilon: best.0,
        lambda: best.1,
        lambda_cap_hit: best.1 == LAMBDA_MAX,
        sigma_exceeds_tau: p.sigma > p.tau,
    }
}

pub fn sgd_epsilon(p: &SgdAccountParams) -> f64 {
    let acc = sgd_account(p);
    if acc.sigma_exceeds_tau {
        log::debug!("sigma {} > tau {}: moment bound outside its derivation range", p.sigma, p.tau);
    }
    acc.epsilon
}

/// Smallest σ (to relative tolerance 1e-6) with `sgd_epsilon(σ) ≤ target_eps`.
pub fn calibrate_sigma(target_eps: f64, q: f64, tau: f64, steps: usize, delta: f64) -> Result<f64> {
    if !(target_eps > 0.0 && target_eps.is_finite()) {
        return Err(DparError::Calibration(format!("target epsilon must be positive, got {target_eps}")));
    }
    let eps_at = |sigma: f64| {
        sgd_epsilon(&SgdAccountParams {
            q,
            tau,
            sigma,
            steps,
            delta,
        })
    };
    SgdAccountParams { q, tau, sigma: 1.0, steps, delta }.validate()?;
    if eps_at(SIGMA_MAX) > target_eps {
        return Err(DparError::Calibration(format!(
            "epsilon {target_eps} unreachable with sigma <= {SIGMA_MAX} (q={q}, tau={tau}, T={steps}, delta={delta})"
        )));
    }
    let mut lo = SIGMA_MAX * 1e-18;
    if eps_at(lo) <= target_eps {
        return Ok(lo);
    }
    let mut hi = SIGMA_MAX;
    while hi - lo > 1e-6 * hi {
        let mid = (lo * hi).sqrt();
        if eps_at(mid) <= target_eps {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Overall guarantee on the full graph: `q′(ε_pr+ε_sgd, δ_pr+δ_sgd)` read
/// literally, i.e. `(q′(ε_pr+ε_sgd), δ_pr+δ_sgd)`.
pub fn total_budget(eps_pr: f64, delta_pr: f64, eps_sgd: f64, delta_sgd: f64, q_prime: f64) -> Result<PrivacyBudget> {
    if !(q_prime > 0.0 && q_prime <= 1.0) {
        return Err(DparError::Config(format!("q_prime must be in (0, 1], got {q_prime}")));
    }
    Ok(PrivacyBudget {
        epsilon: q_prime * (eps_pr + eps_sgd),
        delta: delta_pr + delta_sgd,
    })
}

/// Inverse of [`total_budget`] with δ split evenly between the stages.
pub fn split_budget(total: &PrivacyBudget, ratio_pr: f64, q_prime: f64) -> Result<(PrivacyBudget, PrivacyBudget)> {
    split_budget_with_delta_share(total, ratio_pr, q_prime, 0.5)
}

/// Inverse of [`total_budget`]: `ε_pr = ratio·ε/q′`, `ε_sgd = (1−ratio)·ε/q′`,
/// `δ_pr = share·δ`, `δ_sgd = (1−share)·δ`.
pub fn split_budget_with_delta_share(
    total: &PrivacyBudget,
    ratio_pr: f64,
    q_prime: f64,
    delta_share_pr: f64,
) -> Result<(PrivacyBudget, PrivacyBudget)> {
    if !(0.0..=1.0).contains(&ratio_pr) {
        return Err(DparError::Config(format!("ratio_pr must be in [0, 1], got {ratio_pr}")));
    }
    if !(0.0..=1.0).contains(&delta_share_pr) {
        return Err(DparError::Config(format!("delta share must be in [0, 1], got {delta_share_pr}")));
    }
    if !(q_prime > 0.0 && q_prime <= 1.0) {
        return Err(DparError::Config(format!("q_prime must be in (0, 1], got {q_prime}")));
    }
    let scaled = total.epsilon / q_prime;
    Ok((
        PrivacyBudget {
            epsilon: ratio_pr * scaled,
            delta: delta_share_pr * total.delta,
        },
        PrivacyBudget {
            epsilon: (1.0 - ratio_pr) * scaled,
            delta: (1.0 - delta_share_pr) * total.delta,
        },
    ))
}
