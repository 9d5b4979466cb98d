use std::collections::BTreeMap;

use super::{
    ApprMechanism, EmConfig, EmOption, ExponentialMechanism, FeaturesOnly, GaussianMechanism, GmConfig,
    NonPrivateTopK,
};
use crate::accountant::{em_eps_for_cost, optimal_decompose, PrivacyBudget};
use crate::error::{DparError, Result};

/// Everything a mechanism factory needs to calibrate itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MechanismRequest {
    pub k: usize,
    /// Entrywise clip C₂ (exponential mechanism).
    pub clip_entry: f64,
    /// ℓ2 clip C₁ (Gaussian mechanism).
    pub clip_l2: f64,
    /// Number of rows M the budget is composed over.
    pub rows: usize,
    /// `(ε_pr, δ_pr)` available to the structure stage.
    pub structure_budget: Option<PrivacyBudget>,
    /// Per-row `(ε, δ)` used as given instead of decomposing the stage
    /// budget.
    pub row_budget: Option<PrivacyBudget>,
    /// Share of the per-row ε spent on reported values (option II).
    pub value_share: f64,
}

impl MechanismRequest {
    /// Per-row `(ε, δ)` whose `M`-fold composition is the structure budget.
    fn per_row(&self) -> Result<(f64, f64)> {
        if let Some(row) = self.row_budget {
            if !(row.epsilon > 0.0 && row.delta > 0.0) {
                return Err(DparError::Budget(format!(
                    "per-row budget ({}, {}) must be positive",
                    row.epsilon, row.delta
                )));
            }
            return Ok((row.epsilon, row.delta));
        }
        let total = self.structure_budget.ok_or_else(|| {
            DparError::Budget("mechanism needs a structure-stage budget".into())
        })?;
        if total.epsilon <= 0.0 || total.delta <= 0.0 {
            return Err(DparError::Budget(format!(
                "structure-stage budget ({}, {}) must be positive",
                total.epsilon, total.delta
            )));
        }
        if self.rows == 0 {
            return Err(DparError::Config("rows must be positive".into()));
        }
        let eps = optimal_decompose(&total, self.rows)?;
        Ok((eps, total.delta / (2.0 * self.rows as f64)))
    }
}

type Factory = fn(&MechanismRequest) -> Result<Box<dyn ApprMechanism>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MechanismInfo {
    pub name: &'static str,
    pub summary: &'static str,
    /// Consumes part of the total budget for the structure stage. When false
    /// the whole budget goes to DP-SGD.
    pub spends_structure_budget: bool,
    /// Offers any privacy guarantee at all.
    pub private: bool,
}

struct Entry {
    info: MechanismInfo,
    factory: Factory,
}

/// Name → mechanism factory.
pub struct MechanismRegistry {
    entries: BTreeMap<&'static str, Entry>,
}

impl Default for MechanismRegistry {
    fn default() -> Self {
        Self::with_builtin()
    }
}

impl MechanismRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn with_builtin() -> Self {
        let mut r = Self::empty();
        let builtin: [(MechanismInfo, Factory); 5] = [
            (
                MechanismInfo {
                    name: "em0",
                    summary: "Gumbel top-K selection, selected entries set to 1/K",
                    spends_structure_budget: true,
                    private: true,
                },
                build_em0,
            ),
            (
                MechanismInfo {
                    name: "em1",
                    summary: "Gumbel top-K selection, selected entries report Laplace-noised values",
                    spends_structure_budget: true,
                    private: true,
                },
                build_em1,
            ),
            (
                MechanismInfo {
                    name: "gm",
                    summary: "l2-clipped APPR plus Gaussian noise, top-K noisy entries",
                    spends_structure_budget: true,
                    private: true,
                },
                build_gm,
            ),
            (
                MechanismInfo {
                    name: "features",
                    summary: "one-hot rows; features only, whole budget to DP-SGD",
                    spends_structure_budget: false,
                    private: true,
                },
                |_| Ok(Box::new(FeaturesOnly)),
            ),
            (
                MechanismInfo {
                    name: "nodp",
                    summary: "exact top-K APPR rows, no privacy",
                    spends_structure_budget: false,
                    private: false,
                },
                |req| Ok(Box::new(NonPrivateTopK { k: req.k })),
            ),
        ];
        for (info, factory) in builtin {
            r.register(info, factory).expect("builtin names are distinct");
        }
        r
    }

    pub fn register(&mut self, info: MechanismInfo, factory: Factory) -> Result<()> {
        if self.entries.contains_key(info.name) {
            return Err(DparError::Config(format!("mechanism {:?} already registered", info.name)));
        }
        self.entries.insert(info.name, Entry { info, factory });
        Ok(())
    }

    pub fn info(&self, name: &str) -> Result<MechanismInfo> {
        self.entries
            .get(name)
            .map(|e| e.info)
            .ok_or_else(|| self.unknown(name))
    }

    pub fn build(&self, name: &str, req: &MechanismRequest) -> Result<Box<dyn ApprMechanism>> {
        let entry = self.entries.get(name).ok_or_else(|| self.unknown(name))?;
        (entry.factory)(req)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    fn unknown(&self, name: &str) -> DparError {
        DparError::Config(format!(
            "unknown mechanism {name:?}; known: {}",
            self.names().join(", ")
        ))
    }
}

fn build_em(req: &MechanismRequest, option: EmOption) -> Result<Box<dyn ApprMechanism>> {
    let (row_eps, row_delta) = req.per_row()?;
    let (select_cost, eps_values) = match option {
        EmOption::UniformWeights => (row_eps, 0.0),
        EmOption::NoisyValues => {
            if !(req.value_share > 0.0 && req.value_share < 1.0) {
                return Err(DparError::Config(format!(
                    "value_share must be in (0, 1) for em1, got {}",
                    req.value_share
                )));
            }
            ((1.0 - req.value_share) * row_eps, req.value_share * row_eps)
        }
    };
    let cfg = EmConfig {
        eps: em_eps_for_cost(select_cost, req.k, row_delta)?,
        eps_values,
        delta: row_delta,
        clip: req.clip_entry,
        k: req.k,
        option,
    };
    Ok(Box::new(ExponentialMechanism::new(cfg)?))
}

fn build_em0(req: &MechanismRequest) -> Result<Box<dyn ApprMechanism>> {
    build_em(req, EmOption::UniformWeights)
}

fn build_em1(req: &MechanismRequest) -> Result<Box<dyn ApprMechanism>> {
    build_em(req, EmOption::NoisyValues)
}

fn build_gm(req: &MechanismRequest) -> Result<Box<dyn ApprMechanism>> {
    let (row_eps, row_delta) = req.per_row()?;
    Ok(Box::new(GaussianMechanism::new(GmConfig {
        eps: row_eps,
        delta: row_delta,
        clip: req.clip_l2,
        k: req.k,
    })?))
}
