use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dpar::accountant::PrivacyBudget;
use dpar::dp_appr::MechanismRegistry;
use dpar::graph::SbmParams;
use dpar::harness::{
    cmd_account, cmd_appr, cmd_eval, cmd_prepare, cmd_sweep, cmd_synth, cmd_train, write_report,
    RunConfig, EDGES_FILE, FEATURES_FILE, LABELS_FILE, MODEL_FILE, RUN_CONFIG_FILE,
};
use dpar::{DparError, Result};

#[derive(Parser)]
#[command(name = "dpar", version, about = "Node-level DP decoupled GNN training")]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory holding stage inputs and outputs.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    /// Extra `key=value` overrides, applied before command flags.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a stochastic block model graph.
    Synth(SynthArgs),
    /// Load a graph and write the inductive split.
    Prepare(PrepareArgs),
    /// Compute the (private) APPR matrix.
    Appr(ApprArgs),
    /// Train the encoder with DP-SGD.
    Train(TrainArgs),
    /// Evaluate on the test graph.
    Eval(EvalArgs),
    /// Report the privacy budget of a configuration.
    Account(AccountArgs),
    /// Accuracy over a grid of budget ratios.
    Sweep(SweepArgs),
    /// prepare, appr, train and eval in one go on a graph directory.
    Run(RunArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 300)]
    nodes: usize,
    #[arg(long, default_value_t = 3)]
    communities: usize,
    #[arg(long, default_value_t = 0.1)]
    p_in: f64,
    #[arg(long, default_value_t = 0.005)]
    p_out: f64,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    edges: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    train_frac: Option<f64>,
    /// q′, the node sampling rate.
    #[arg(long)]
    sample_rate: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Defaults to the working directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ApprArgs {
    #[arg(long)]
    mechanism: Option<String>,
    /// Structure-stage ε; derived from the total budget when absent.
    #[arg(long, requires = "delta")]
    eps: Option<f64>,
    #[arg(long, requires = "eps")]
    delta: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    /// Clip bound of the chosen mechanism (C₂ for em0/em1, C₁ for gm).
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// DP-SGD ε; derived from the total budget when absent.
    #[arg(long, requires = "delta")]
    eps: Option<f64>,
    #[arg(long, requires = "eps")]
    delta: Option<f64>,
    #[arg(long, conflicts_with = "auto")]
    sigma: Option<f64>,
    /// Calibrate σ from the DP-SGD budget.
    #[arg(long)]
    auto: bool,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    clip_grad: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Extra copy of the trained parameters.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    power_iters: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Write test-node encoder outputs as CSV.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args)]
struct AccountArgs {
    #[arg(long)]
    mechanism: Option<String>,
    #[arg(long)]
    eps_total: Option<f64>,
    #[arg(long)]
    delta_total: Option<f64>,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    q_prime: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    clip: Option<f64>,
    /// Fix the per-row ε of the structure stage instead of deriving it.
    #[arg(long, requires = "row_delta")]
    row_eps: Option<f64>,
    #[arg(long, requires = "row_eps")]
    row_delta: Option<f64>,
    /// N in q = B/N; the DP-SGD stage is skipped without it.
    #[arg(long)]
    train_nodes: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Graph directory; defaults to the working directory.
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    total_eps: Option<f64>,
    #[arg(long)]
    total_delta: Option<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
    ratios: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "em0,em1,gm")]
    mechanisms: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Directory with edges.tsv, features.csv and labels.txt.
    #[arg(long)]
    graph: PathBuf,
}

struct Overrides(Vec<(&'static str, String)>);

impl Overrides {
    fn push<T: ToString>(&mut self, key: &'static str, value: Option<T>) {
        if let Some(v) = value {
            self.0.push((key, v.to_string()));
        }
    }
}

fn budget(eps: Option<f64>, delta: Option<f64>) -> Result<Option<PrivacyBudget>> {
    match (eps, delta) {
        (Some(e), Some(d)) => Ok(Some(PrivacyBudget::new(e, d)?)),
        _ => Ok(None),
    }
}

fn clip_key(mechanism: &str) -> &'static str {
    if mechanism == "gm" {
        "clip_l2"
    } else {
        "clip_entry"
    }
}

/// Defaults, then the workdir's saved `run.conf` for stages after
/// `prepare`, then `--config`, `--set` and command flags.
fn load_config(cli: &Cli, flags: Overrides, from_workdir: bool) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let saved = cli.workdir.join(RUN_CONFIG_FILE);
    if from_workdir && saved.exists() {
        let text = fs::read_to_string(&saved).map_err(|e| DparError::Io { path: saved.clone(), source: e })?;
        cfg.apply_text(&text, &saved)?;
    }
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| DparError::Io { path: path.clone(), source: e })?;
        cfg.apply_text(&text, path)?;
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| DparError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    for (k, v) in &flags.0 {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    // A closed pipe (e.g. `| head`) is not an error worth a panic.
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn run(cli: &Cli) -> Result<()> {
    let registry = MechanismRegistry::with_builtin();
    let workdir = cli.workdir.as_path();
    match &cli.command {
        Command::Synth(a) => {
            let params = SbmParams {
                n_nodes: a.nodes,
                n_communities: a.communities,
                p_in: a.p_in,
                p_out: a.p_out,
                feature_dim: a.dim,
                feature_noise: a.noise,
                seed: a.seed,
            };
            let g = cmd_synth(&params, &a.out)?;
            log::info!("wrote {} nodes, {} edges to {}", g.n_nodes(), g.n_edges(), a.out.display());
        }
        Command::Prepare(a) => {
            let mut o = Overrides(Vec::new());
            o.push("train_fraction", a.train_frac);
            o.push("q_prime", a.sample_rate);
            o.push("m", a.m);
            o.push("seed", a.seed);
            let cfg = load_config(cli, o, false)?;
            let out = a.out.as_deref().unwrap_or(workdir);
            let split = cmd_prepare(&a.edges, &a.features, &a.labels, &cfg, out)?;
            log::info!(
                "train {} nodes, test {} nodes, V_M {} nodes",
                split.train_graph.n_nodes(),
                split.test_graph.n_nodes(),
                split.v_m.len()
            );
        }
        Command::Appr(a) => {
            let mut o = Overrides(Vec::new());
            o.push("mechanism", a.mechanism.clone());
            o.push("k", a.k);
            let mech = a.mechanism.clone().unwrap_or_default();
            let mut cfg = load_config(cli, o, true)?;
            if let Some(c) = a.clip {
                let name = if mech.is_empty() { cfg.mechanism.clone() } else { mech };
                cfg.set(clip_key(&name), &c.to_string())?;
                cfg.validate()?;
            }
            let path = cmd_appr(workdir, &cfg, &registry, budget(a.eps, a.delta)?, a.out.as_deref())?;
            log::info!("wrote {}", path.display());
        }
        Command::Train(a) => {
            let mut o = Overrides(Vec::new());
            o.push("sigma", a.sigma);
            if a.auto {
                o.push("sigma", Some("auto"));
            }
            o.push("batch", a.batch);
            o.push("epochs", a.epochs);
            o.push("lr", a.lr);
            o.push("clip_grad", a.clip_grad);
            o.push("tau", a.tau);
            let cfg = load_config(cli, o, true)?;
            let summary = cmd_train(workdir, &cfg, &registry, budget(a.eps, a.delta)?)?;
            if let Some(out) = &a.out {
                let src = workdir.join(MODEL_FILE);
                fs::copy(&src, out).map_err(|e| DparError::Io { path: out.clone(), source: e })?;
            }
            print_json(&summary);
        }
        Command::Eval(a) => {
            let mut o = Overrides(Vec::new());
            o.push("power_iters", a.power_iters);
            o.push("eval_alpha", a.alpha);
            let cfg = load_config(cli, o, true)?;
            let metrics = cmd_eval(workdir, &cfg, a.embeddings.as_deref())?;
            print_json(&metrics);
        }
        Command::Account(a) => {
            let mut o = Overrides(Vec::new());
            o.push("mechanism", a.mechanism.clone());
            o.push("eps_total", a.eps_total);
            o.push("delta_total", a.delta_total);
            o.push("ratio_pr", a.ratio);
            o.push("q_prime", a.q_prime);
            o.push("m", a.m);
            o.push("k", a.k);
            o.push("sigma", a.sigma);
            o.push("batch", a.batch);
            o.push("epochs", a.epochs);
            o.push("tau", a.tau);
            let mut cfg = load_config(cli, o, false)?;
            if let Some(c) = a.clip {
                cfg.set(clip_key(&cfg.mechanism.clone()), &c.to_string())?;
                cfg.validate()?;
            }
            let report = cmd_account(&cfg, &registry, budget(a.row_eps, a.row_delta)?, a.train_nodes)?;
            for w in &report.warnings {
                log::warn!("{w}");
            }
            if let Some(out) = &a.out {
                write_report(&report, out)?;
            }
            print_json(&report);
        }
        Command::Sweep(a) => {
            let mut o = Overrides(Vec::new());
            o.push("eps_total", a.total_eps);
            o.push("delta_total", a.total_delta);
            let cfg = load_config(cli, o, false)?;
            let graph_dir = a.graph.as_deref().unwrap_or(workdir);
            let rows = cmd_sweep(graph_dir, &cfg, &registry, &a.ratios, &a.mechanisms, &a.seeds, &a.out)?;
            log::info!("wrote {} rows to {}", rows.len(), a.out.display());
        }
        Command::Run(a) => {
            let cfg = load_config(cli, Overrides(Vec::new()), false)?;
            let g = |f: &str| a.graph.join(f);
            cmd_prepare(&g(EDGES_FILE), &g(FEATURES_FILE), &g(LABELS_FILE), &cfg, workdir)?;
            cmd_appr(workdir, &cfg, &registry, None, None)?;
            cmd_train(workdir, &cfg, &registry, None)?;
            let metrics = cmd_eval(workdir, &cfg, None)?;
            print_json(&metrics);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
