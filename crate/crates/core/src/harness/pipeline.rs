use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::accountant::{split_budget_with_delta_share, total_budget, PrivacyBudget};
use crate::dp_appr::{build_appr_matrix, ApprMatrix, MechanismInfo, MechanismRegistry, MechanismRequest};
use crate::error::{DparError, Result};
use crate::graph::{inductive_split, DatasetSplit, Graph};
use crate::inference::{accuracy, power_iteration_predict, EvalConfig};
use crate::model::MlpParams;
use crate::rng::{SeedStreams, STREAM_APPR_NOISE, STREAM_INIT};
use crate::trainer::{train, NoiseSetting, TrainConfig, TrainOutcome, TrainSummary};

/// Budgets handed to the two stages before anything runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetPlan {
    /// `(ε_pr, δ_pr)` for the APPR mechanism, if it spends any.
    pub structure: Option<PrivacyBudget>,
    /// `(ε_sgd, δ_sgd)`, absent for non-private training.
    pub sgd: Option<PrivacyBudget>,
}

pub fn plan_budget(cfg: &RunConfig, info: &MechanismInfo) -> Result<BudgetPlan> {
    let total = PrivacyBudget::new(cfg.eps_total, cfg.delta_total)?;
    if !info.private {
        return Ok(BudgetPlan { structure: None, sgd: None });
    }
    if !info.spends_structure_budget {
        let (_, sgd) = split_budget_with_delta_share(&total, 0.0, cfg.q_prime, 0.0)?;
        return Ok(BudgetPlan { structure: None, sgd: Some(sgd) });
    }
    let (pr, sgd) = split_budget_with_delta_share(&total, cfg.ratio_pr, cfg.q_prime, cfg.delta_share_pr)?;
    if pr.epsilon <= 0.0 || pr.delta <= 0.0 {
        return Err(DparError::Budget(format!(
            "mechanism {} needs a structure budget but ratio_pr={} / delta_share_pr={} leave ({}, {})",
            info.name, cfg.ratio_pr, cfg.delta_share_pr, pr.epsilon, pr.delta
        )));
    }
    if sgd.epsilon <= 0.0 || sgd.delta <= 0.0 {
        return Err(DparError::Budget(format!(
            "ratio_pr={} / delta_share_pr={} leave no budget for DP-SGD",
            cfg.ratio_pr, cfg.delta_share_pr
        )));
    }
    Ok(BudgetPlan { structure: Some(pr), sgd: Some(sgd) })
}

pub fn mechanism_request(cfg: &RunConfig, plan: &BudgetPlan) -> MechanismRequest {
    MechanismRequest {
        k: cfg.k,
        clip_entry: cfg.clip_entry,
        clip_l2: cfg.clip_l2,
        rows: cfg.m,
        structure_budget: plan.structure,
        row_budget: None,
        value_share: cfg.value_share,
    }
}

pub fn train_config(cfg: &RunConfig, plan: &BudgetPlan) -> TrainConfig {
    let (noise, delta) = match (plan.sgd, cfg.sigma) {
        (None, _) => (NoiseSetting::NonPrivate, 0.0),
        (Some(b), Some(s)) => (NoiseSetting::Sigma(s), b.delta),
        (Some(b), None) => (NoiseSetting::TargetEpsilon(b.epsilon), b.delta),
    };
    TrainConfig {
        lr: cfg.lr,
        batch: cfg.batch,
        epochs: cfg.epochs,
        clip_grad: cfg.clip_grad,
        tau: cfg.tau,
        noise,
        delta,
    }
}

/// Overall guarantee from what each stage actually spent.
pub fn combine_spent(pi_spent: Option<PrivacyBudget>, sgd_spent: Option<PrivacyBudget>, q_prime: f64) -> Result<Option<PrivacyBudget>> {
    match (pi_spent, sgd_spent) {
        (Some(pr), Some(sgd)) => total_budget(pr.epsilon, pr.delta, sgd.epsilon, sgd.delta, q_prime).map(Some),
        _ => Ok(None),
    }
}

/// Fixed-key record written after evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub test_accuracy: f64,
    pub epsilon_total: Option<f64>,
    pub delta_total: Option<f64>,
    pub mechanism: String,
    pub eps_pr: Option<f64>,
    pub delta_pr: Option<f64>,
    pub eps_sgd: Option<f64>,
    pub delta_sgd: Option<f64>,
    pub q_prime: f64,
    pub composition: String,
    pub sigma: f64,
    /// Sampling ratio `B/N` used by the moments bound.
    pub q: f64,
    /// `B/M`, the rate at which batches actually draw from `V_M`.
    pub q_batch_from_rows: f64,
    pub steps: usize,
    pub tau: Option<f64>,
    pub lambda_cap_hit: bool,
    pub sigma_exceeds_tau: bool,
    pub train_nodes: usize,
    pub test_nodes: usize,
    pub m: usize,
    pub power_iters: usize,
    pub eval_alpha: f64,
    pub seed: u64,
}

pub const COMPOSITION_RULE: &str = "total = (q'*(eps_pr + eps_sgd), delta_pr + delta_sgd)";

pub struct PipelineRun {
    pub split: DatasetSplit,
    pub pi: ApprMatrix,
    pub outcome: TrainOutcome,
    pub metrics: Metrics,
}

pub fn build_metrics(
    seed: u64,
    eval: &EvalConfig,
    split: &DatasetSplit,
    pi: &ApprMatrix,
    outcome: &TrainSummary,
    test_accuracy: f64,
) -> Result<Metrics> {
    let total = combine_spent(pi.spent, outcome.spent, split.spec.q_prime)?;
    Ok(Metrics {
        test_accuracy,
        epsilon_total: total.map(|b| b.epsilon),
        delta_total: total.map(|b| b.delta),
        mechanism: pi.mechanism.clone(),
        eps_pr: pi.spent.map(|b| b.epsilon),
        delta_pr: pi.spent.map(|b| b.delta),
        eps_sgd: outcome.spent.map(|b| b.epsilon),
        delta_sgd: outcome.spent.map(|b| b.delta),
        q_prime: split.spec.q_prime,
        composition: COMPOSITION_RULE.into(),
        sigma: outcome.sigma,
        q: outcome.q,
        q_batch_from_rows: outcome.batch as f64 / split.v_m.len() as f64,
        steps: outcome.steps,
        tau: outcome.tau,
        lambda_cap_hit: outcome.lambda_cap_hit,
        sigma_exceeds_tau: outcome.sigma_exceeds_tau,
        train_nodes: split.train_graph.n_nodes(),
        test_nodes: split.test_graph.n_nodes(),
        m: split.v_m.len(),
        power_iters: eval.power_iters,
        eval_alpha: eval.alpha,
        seed,
    })
}

/// Split, private APPR, DP-SGD and evaluation, all from `cfg.seed`.
pub fn run_pipeline(graph: &Graph, cfg: &RunConfig, registry: &MechanismRegistry) -> Result<PipelineRun> {
    cfg.validate()?;
    let info = registry.info(&cfg.mechanism)?;
    let plan = plan_budget(cfg, &info)?;
    let streams = cfg.streams();

    let split = inductive_split(graph, &cfg.split_spec())?;
    let mechanism = registry.build(&cfg.mechanism, &mechanism_request(cfg, &plan))?;
    let pi = build_appr_matrix(
        mechanism.as_ref(),
        &split.train_graph,
        &split.v_m,
        &cfg.appr_params(),
        streams.noise(STREAM_APPR_NOISE),
    )?;

    let outcome = train_stage(cfg, &plan, &split, &pi, &streams)?;
    let preds = power_iteration_predict(&outcome.params, &split.test_graph, &cfg.eval_config())?;
    let acc = accuracy(&preds, split.test_graph.labels())?;
    let metrics = build_metrics(cfg.seed, &cfg.eval_config(), &split, &pi, &outcome.summary, acc)?;
    Ok(PipelineRun { split, pi, outcome, metrics })
}

pub fn train_stage(
    cfg: &RunConfig,
    plan: &BudgetPlan,
    split: &DatasetSplit,
    pi: &ApprMatrix,
    streams: &SeedStreams,
) -> Result<TrainOutcome> {
    let g = &split.train_graph;
    let init = MlpParams::init(g.feature_dim(), cfg.hidden, g.n_classes(), &mut streams.stream(STREAM_INIT));
    train(split, pi, init, &train_config(cfg, plan), streams)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub mechanism: String,
    pub eps_total: Option<f64>,
    pub delta_total: Option<f64>,
    pub accuracy: f64,
    pub seed: u64,
}

pub const SWEEP_HEADER: &str = "ratio,mechanism,eps_total,delta_total,accuracy,seed";

impl SweepRow {
    pub fn csv(&self) -> String {
        let opt = |x: Option<f64>| x.map_or_else(|| "none".to_string(), |v| format!("{v:?}"));
        format!(
            "{:?},{},{},{},{:?},{}",
            self.ratio,
            self.mechanism,
            opt(self.eps_total),
            opt(self.delta_total),
            self.accuracy,
            self.seed
        )
    }
}

/// Runs the pipeline for every (seed, ratio, mechanism) combination.
pub fn sweep(
    graph: &Graph,
    base: &RunConfig,
    registry: &MechanismRegistry,
    ratios: &[f64],
    mechanisms: &[String],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &seed in seeds {
        for &ratio in ratios {
            for mech in mechanisms {
                let mut cfg = base.clone();
                cfg.seed = seed;
                cfg.ratio_pr = ratio;
                cfg.mechanism = mech.clone();
                let run = run_pipeline(graph, &cfg, registry)?;
                log::info!(
                    "sweep seed={seed} ratio={ratio} mechanism={mech}: accuracy {:.4}",
                    run.metrics.test_accuracy
                );
                rows.push(SweepRow {
                    ratio,
                    mechanism: mech.clone(),
                    eps_total: run.metrics.epsilon_total,
                    delta_total: run.metrics.delta_total,
                    accuracy: run.metrics.test_accuracy,
                    seed,
                });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_routes_everything_to_sgd() {
        let reg = MechanismRegistry::with_builtin();
        let cfg = RunConfig { q_prime: 0.5, eps_total: 2.0, ..RunConfig::default() };
        let plan = plan_budget(&cfg, &reg.info("features").unwrap()).unwrap();
        assert_eq!(plan.structure, None);
        assert_eq!(plan.sgd, Some(PrivacyBudget { epsilon: 4.0, delta: 2e-3 }));
    }

    #[test]
    fn private_split_inverts_total() {
        let reg = MechanismRegistry::with_builtin();
        let cfg = RunConfig::default();
        let plan = plan_budget(&cfg, &reg.info("gm").unwrap()).unwrap();
        let (pr, sgd) = (plan.structure.unwrap(), plan.sgd.unwrap());
        let total = combine_spent(Some(pr), Some(sgd), cfg.q_prime).unwrap().unwrap();
        assert!((total.epsilon - 8.0).abs() < 1e-12);
        assert!((total.delta - 2e-3).abs() < 1e-18);
    }

    #[test]
    fn extreme_ratios_are_infeasible_for_private_mechanisms() {
        let reg = MechanismRegistry::with_builtin();
        for ratio in [0.0, 1.0] {
            let cfg = RunConfig { ratio_pr: ratio, ..RunConfig::default() };
            let err = plan_budget(&cfg, &reg.info("em1").unwrap()).unwrap_err();
            assert!(matches!(err, DparError::Budget(_)));
        }
    }

    #[test]
    fn nodp_plans_no_budget() {
        let reg = MechanismRegistry::with_builtin();
        let plan = plan_budget(&RunConfig::default(), &reg.info("nodp").unwrap()).unwrap();
        assert_eq!(plan, BudgetPlan { structure: None, sgd: None });
        assert_eq!(train_config(&RunConfig::default(), &plan).noise, NoiseSetting::NonPrivate);
    }
}
