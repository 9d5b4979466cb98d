//! Mean test accuracy per mechanism on SBM(300, 3) over five seeds.
//!
//! `cargo run --release -p dpar-core --example sbm_ordering -- eps=1,8 lr=0.1`
//! Any other `key=value` argument overrides the run configuration.

use dpar::dp_appr::MechanismRegistry;
use dpar::graph::{generate_sbm, SbmParams};
use dpar::harness::{run_pipeline, RunConfig};

fn main() -> dpar::Result<()> {
    let registry = MechanismRegistry::with_builtin();
    let mut base = RunConfig { q_prime: 1.0, m: 120, lr: 0.1, ..RunConfig::default() };
    let mut mechanisms: Vec<String> = ["nodp", "features", "em0", "em1", "gm"].map(String::from).to_vec();
    let mut eps = vec![1.0, 8.0];
    for arg in std::env::args().skip(1) {
        let Some((k, v)) = arg.split_once('=') else {
            eprintln!("ignoring {arg:?}: expected key=value");
            continue;
        };
        match k {
            "mechanisms" => mechanisms = v.split(',').map(String::from).collect(),
            "eps" => eps = v.split(',').filter_map(|x| x.parse().ok()).collect(),
            _ => base.set(k, v)?,
        }
    }
    let graphs = (0..5)
        .map(|seed| {
            generate_sbm(&SbmParams {
                n_nodes: 300,
                n_communities: 3,
                p_in: 0.1,
                p_out: 0.005,
                feature_dim: 16,
                feature_noise: 0.5,
                seed,
            })
        })
        .collect::<dpar::Result<Vec<_>>>()?;

    println!("eps_total,mechanism,mean_accuracy,sigma");
    for &e in &eps {
        for mech in &mechanisms {
            let mut sum = 0.0;
            let mut sigma = 0.0;
            for (seed, g) in graphs.iter().enumerate() {
                let cfg = RunConfig { seed: seed as u64, mechanism: mech.clone(), eps_total: e, ..base.clone() };
                let run = run_pipeline(g, &cfg, &registry)?;
                sum += run.metrics.test_accuracy;
                sigma = run.metrics.sigma;
            }
            println!("{e},{mech},{:.4},{sigma:.4}", sum / graphs.len() as f64);
        }
    }
    Ok(())
}
