//! Stage commands over a working directory. Each stage reads what earlier
//! stages wrote and fails with a stage-order error when it is missing.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pipeline::{
    build_metrics, mechanism_request, plan_budget, sweep, train_config, train_stage, BudgetPlan, Metrics,
    SweepRow, COMPOSITION_RULE, SWEEP_HEADER,
};
use super::RunConfig;
use crate::accountant::{
    optimal_compose, sgd_account, total_budget, PrivacyBudget, SgdAccountParams, LAMBDA_MAX,
};
use crate::dp_appr::{build_appr_matrix, read_appr_matrix, write_appr_matrix, MechanismRegistry};
use crate::error::{DparError, Result};
use crate::graph::{generate_sbm, inductive_split, load_graph, save_graph, DatasetSplit, Graph, SbmParams, SplitManifest};
use crate::inference::{accuracy, export_embeddings, power_iteration_predict};
use crate::model::MlpParams;
use crate::rng::STREAM_APPR_NOISE;
use crate::trainer::{resolve_sigma, sampling_ratio, TrainSummary};

pub const EDGES_FILE: &str = "edges.tsv";
pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.txt";
pub const SPLIT_FILE: &str = "split.json";
pub const APPR_FILE: &str = "appr.txt";
pub const MODEL_FILE: &str = "model.txt";
pub const TRAIN_FILE: &str = "train.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
/// Configuration `prepare` ran with; later stages start from it.
pub const RUN_CONFIG_FILE: &str = "run.conf";

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| DparError::Json {
        path: path.into(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|e| DparError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| DparError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| DparError::Json {
        path: path.into(),
        source,
    })
}

fn require(dir: &Path, file: &str, stage: &str) -> Result<PathBuf> {
    let path = dir.join(file);
    if !path.exists() {
        return Err(DparError::StageOrder(format!(
            "{} not found; run `{stage}` first",
            path.display()
        )));
    }
    Ok(path)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| DparError::io(dir, e))
}

pub fn save_graph_dir(g: &Graph, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    save_graph(g, &dir.join(EDGES_FILE), &dir.join(FEATURES_FILE), &dir.join(LABELS_FILE))
}

pub fn load_graph_dir(dir: &Path) -> Result<Graph> {
    load_graph(&dir.join(EDGES_FILE), &dir.join(FEATURES_FILE), &dir.join(LABELS_FILE))
}

fn load_workdir_split(dir: &Path, cfg: &RunConfig) -> Result<DatasetSplit> {
    let manifest = SplitManifest::load(&require(dir, SPLIT_FILE, "prepare")?)?;
    let graph = load_graph_dir(dir)?;
    let split = DatasetSplit::from_manifest(&graph, &manifest)?;
    if split.spec != cfg.split_spec() {
        return Err(DparError::Config(format!(
            "configuration {:?} differs from the prepared split {:?}; rerun prepare",
            cfg.split_spec(),
            split.spec
        )));
    }
    Ok(split)
}

/// Generates an SBM graph into `out`.
pub fn cmd_synth(params: &SbmParams, out: &Path) -> Result<Graph> {
    let g = generate_sbm(params)?;
    save_graph_dir(&g, out)?;
    Ok(g)
}

/// Loads a graph, copies it into `out` and writes the split manifest.
pub fn cmd_prepare(edges: &Path, features: &Path, labels: &Path, cfg: &RunConfig, out: &Path) -> Result<DatasetSplit> {
    let graph = load_graph(edges, features, labels)?;
    let split = inductive_split(&graph, &cfg.split_spec())?;
    save_graph_dir(&graph, out)?;
    split.manifest(graph.n_nodes()).save(&out.join(SPLIT_FILE))?;
    let conf = out.join(RUN_CONFIG_FILE);
    fs::write(&conf, cfg.to_text()).map_err(|e| DparError::io(&conf, e))?;
    Ok(split)
}

/// Builds the APPR matrix of the prepared split. `structure` overrides the
/// stage budget derived from the configuration.
pub fn cmd_appr(
    workdir: &Path,
    cfg: &RunConfig,
    registry: &MechanismRegistry,
    structure: Option<PrivacyBudget>,
    out: Option<&Path>,
) -> Result<PathBuf> {
    let split = load_workdir_split(workdir, cfg)?;
    let info = registry.info(&cfg.mechanism)?;
    let mut plan = plan_budget(cfg, &info)?;
    if structure.is_some() && info.spends_structure_budget {
        plan.structure = structure;
    }
    let mut req = mechanism_request(cfg, &plan);
    req.rows = split.v_m.len();
    let mechanism = registry.build(&cfg.mechanism, &req)?;
    let pi = build_appr_matrix(
        mechanism.as_ref(),
        &split.train_graph,
        &split.v_m,
        &cfg.appr_params(),
        cfg.streams().noise(STREAM_APPR_NOISE),
    )?;
    let path = out.map_or_else(|| workdir.join(APPR_FILE), Path::to_path_buf);
    write_appr_matrix(&pi, &path)?;
    Ok(path)
}

/// Trains on the stored APPR matrix. `sgd` overrides the DP-SGD budget
/// derived from the configuration.
pub fn cmd_train(
    workdir: &Path,
    cfg: &RunConfig,
    registry: &MechanismRegistry,
    sgd: Option<PrivacyBudget>,
) -> Result<TrainSummary> {
    let split = load_workdir_split(workdir, cfg)?;
    let pi = read_appr_matrix(&require(workdir, APPR_FILE, "appr")?)?;
    let info = registry.info(&pi.mechanism)?;
    let mut cfg = cfg.clone();
    cfg.mechanism = pi.mechanism.clone();
    let plan = match (info.private, sgd) {
        (false, _) => BudgetPlan { structure: None, sgd: None },
        (true, Some(b)) => BudgetPlan { structure: None, sgd: Some(b) },
        (true, None) => plan_budget(&cfg, &info)?,
    };
    let outcome = train_stage(&cfg, &plan, &split, &pi, &cfg.streams())?;
    outcome.params.save(&workdir.join(MODEL_FILE))?;
    outcome.write_log(&workdir.join(TRAIN_LOG_FILE))?;
    write_json(&outcome.summary, &workdir.join(TRAIN_FILE))?;
    log::info!(
        "trained {} steps on {} rows of mechanism {}; rows one-hot at own node: {}",
        outcome.summary.steps,
        pi.n_rows(),
        pi.mechanism,
        outcome.summary.rows_one_hot_self
    );
    Ok(outcome.summary)
}

/// Evaluates the trained model on the test graph and writes the metrics.
pub fn cmd_eval(workdir: &Path, cfg: &RunConfig, embeddings: Option<&Path>) -> Result<Metrics> {
    let split = load_workdir_split(workdir, cfg)?;
    let pi = read_appr_matrix(&require(workdir, APPR_FILE, "appr")?)?;
    let model = MlpParams::load(&require(workdir, MODEL_FILE, "train")?)?;
    let summary: TrainSummary = read_json(&require(workdir, TRAIN_FILE, "train")?)?;
    let eval = cfg.eval_config();
    let preds = power_iteration_predict(&model, &split.test_graph, &eval)?;
    let acc = accuracy(&preds, split.test_graph.labels())?;
    let metrics = build_metrics(cfg.seed, &eval, &split, &pi, &summary, acc)?;
    write_json(&metrics, &workdir.join(METRICS_FILE))?;
    if let Some(path) = embeddings {
        export_embeddings(&model, &split.test_graph, path)?;
    }
    Ok(metrics)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub mechanism: String,
    pub rows: usize,
    pub k: usize,
    pub noise: BTreeMap<String, f64>,
    pub epsilon: f64,
    pub delta: f64,
    pub rule: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdReport {
    pub q: f64,
    pub train_nodes: usize,
    pub batch: usize,
    pub tau: f64,
    pub sigma: f64,
    pub steps: usize,
    pub delta: f64,
    pub epsilon: f64,
    pub lambda: u32,
    pub lambda_max: u32,
    pub rule: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountReport {
    pub mechanism: String,
    pub eps_total_requested: f64,
    pub delta_total_requested: f64,
    pub ratio_pr: f64,
    pub q_prime: f64,
    pub structure: Option<StructureReport>,
    pub sgd: Option<SgdReport>,
    pub total: Option<PrivacyBudget>,
    pub composition: String,
    pub warnings: Vec<String>,
}

/// Budget report without running anything. `row_budget` fixes the per-row
/// `(ε, δ)` of the structure stage; `train_nodes` is `N` for `q = B/N`.
pub fn cmd_account(
    cfg: &RunConfig,
    registry: &MechanismRegistry,
    row_budget: Option<PrivacyBudget>,
    train_nodes: Option<usize>,
) -> Result<AccountReport> {
    let info = registry.info(&cfg.mechanism)?;
    let mut warnings = Vec::new();
    let mut plan = plan_budget(cfg, &info)?;
    if let (Some(row), true) = (row_budget, info.spends_structure_budget) {
        plan.structure = Some(optimal_compose(row.epsilon, cfg.m, row.delta)?);
    }

    let structure = if info.spends_structure_budget {
        let mut req = mechanism_request(cfg, &plan);
        req.row_budget = row_budget;
        let mech = registry.build(&cfg.mechanism, &req)?;
        let spent = mech.budget(cfg.m)?.expect("private mechanism reports a budget");
        Some(StructureReport {
            mechanism: mech.name().to_string(),
            rows: cfg.m,
            k: mech.k(),
            noise: mech.noise_scales().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            epsilon: spent.epsilon,
            delta: spent.delta,
            rule: "optimal composition of M per-row costs: (eps_g, 2*M*delta_row)".into(),
        })
    } else {
        None
    };

    let sgd = match (plan.sgd, train_nodes) {
        (Some(b), Some(n)) => {
            let tc = train_config(cfg, &plan);
            let q = sampling_ratio(cfg.batch, n);
            if !(q > 0.0 && q <= 1.0) {
                return Err(DparError::Config(format!("batch {} larger than {n} training nodes", cfg.batch)));
            }
            let steps = tc.steps(cfg.m);
            let sigma = resolve_sigma(&tc, q, steps)?;
            let acc = sgd_account(&SgdAccountParams { q, tau: cfg.tau, sigma, steps, delta: b.delta });
            if acc.sigma_exceeds_tau {
                warnings.push(format!("sigma {sigma} > tau {}: moment bound derived for sigma <= tau", cfg.tau));
            }
            if acc.lambda_cap_hit {
                warnings.push(format!("moment order hit the cap {LAMBDA_MAX}"));
            }
            Some(SgdReport {
                q,
                train_nodes: n,
                batch: cfg.batch,
                tau: cfg.tau,
                sigma,
                steps,
                delta: b.delta,
                epsilon: acc.epsilon,
                lambda: acc.lambda,
                lambda_max: LAMBDA_MAX,
                rule: "min over lambda of (T q^2 tau^2 lambda(lambda+1)/sigma^2 + ln(1/delta))/lambda, q = B/N".into(),
            })
        }
        (Some(_), None) => {
            warnings.push("DP-SGD stage not evaluated: number of training nodes unknown".into());
            None
        }
        (None, _) => None,
    };
    if !info.private {
        warnings.push(format!("mechanism {} is not private", info.name));
    }

    let total = match (&structure, &sgd, info.spends_structure_budget) {
        (Some(s), Some(g), _) => Some(total_budget(s.epsilon, s.delta, g.epsilon, g.delta, cfg.q_prime)?),
        (None, Some(g), false) => Some(total_budget(0.0, 0.0, g.epsilon, g.delta, cfg.q_prime)?),
        _ => None,
    };

    Ok(AccountReport {
        mechanism: cfg.mechanism.clone(),
        eps_total_requested: cfg.eps_total,
        delta_total_requested: cfg.delta_total,
        ratio_pr: cfg.ratio_pr,
        q_prime: cfg.q_prime,
        structure,
        sgd,
        total,
        composition: COMPOSITION_RULE.into(),
        warnings,
    })
}

/// Ratio sweep over the graph stored in `graph_dir`, written as CSV.
pub fn cmd_sweep(
    graph_dir: &Path,
    cfg: &RunConfig,
    registry: &MechanismRegistry,
    ratios: &[f64],
    mechanisms: &[String],
    seeds: &[u64],
    out: &Path,
) -> Result<Vec<SweepRow>> {
    let graph = load_graph_dir(graph_dir)?;
    let rows = sweep(&graph, cfg, registry, ratios, mechanisms, seeds)?;
    let mut text = String::from(SWEEP_HEADER);
    text.push('\n');
    for r in &rows {
        text.push_str(&r.csv());
        text.push('\n');
    }
    fs::write(out, text).map_err(|e| DparError::io(out, e))?;
    Ok(rows)
}

pub fn write_report<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    write_json(value, path)
}
