use dpar::accountant::PrivacyBudget;
use dpar::appr::{solve_appr_ista, ApprParams};
use dpar::dp_appr::{
    build_appr_matrix, em_select, EmConfig, EmOption, MechanismRegistry, MechanismRequest,
};
use dpar::graph::{generate_sbm, Graph, SbmParams};
use dpar::rng::NoiseRng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn sbm(seed: u64) -> Graph {
    generate_sbm(&SbmParams {
        n_nodes: 90,
        n_communities: 3,
        p_in: 0.15,
        p_out: 0.01,
        feature_dim: 4,
        feature_noise: 0.5,
        seed,
    })
    .unwrap()
}

fn request(structure: Option<PrivacyBudget>, rows: usize) -> MechanismRequest {
    MechanismRequest {
        k: 2,
        clip_entry: 0.001,
        clip_l2: 0.01,
        rows,
        structure_budget: structure,
        row_budget: None,
        value_share: 0.5,
    }
}

#[test]
fn gumbel_top1_follows_softmax() {
    let cfg = EmConfig {
        eps: 2.0,
        eps_values: 0.0,
        delta: 1e-5,
        clip: 1.0,
        k: 1,
        option: EmOption::UniformWeights,
    };
    let u = [0.5, 0.2, 0.0, 0.1];
    let z: f64 = u.iter().map(|x| (x * 2.0f64).exp()).sum();
    let mut counts = [0usize; 4];
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let trials = 50_000;
    for _ in 0..trials {
        counts[em_select(&u, &cfg, &mut rng).unwrap()[0].0] += 1;
    }
    let tv: f64 = 0.5
        * u.iter()
            .zip(counts)
            .map(|(x, c)| ((x * 2.0f64).exp() / z - c as f64 / trials as f64).abs())
            .sum::<f64>();
    assert!(tv < 0.01, "tv {tv}, counts {counts:?}");
}

#[test]
fn em_with_huge_budget_recovers_the_true_top_k() {
    let g = sbm(1);
    let params = ApprParams::default();
    let cfg = EmConfig {
        eps: 1e9,
        eps_values: 0.0,
        delta: 1e-5,
        clip: 1.0,
        k: 2,
        option: EmOption::UniformWeights,
    };
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    for s in 0..10 {
        let v = solve_appr_ista(&g, s, &params).unwrap().vector;
        let mut sorted = v.entries.clone();
        sorted.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut want: Vec<usize> = sorted[..2].iter().map(|e| e.0).collect();
        want.sort_unstable();
        let mut got: Vec<usize> = em_select(&v.to_dense(g.n_nodes()), &cfg, &mut rng)
            .unwrap()
            .into_iter()
            .map(|e| e.0)
            .collect();
        got.sort_unstable();
        assert_eq!(got, want);
    }
}

#[test]
fn em_candidates_include_nodes_outside_the_support() {
    let g = sbm(2);
    let params = ApprParams { rho: 1e-2, ..ApprParams::default() };
    let reg = MechanismRegistry::with_builtin();
    let mech = reg.build("em0", &request(Some(PrivacyBudget { epsilon: 0.5, delta: 1e-4 }), 30)).unwrap();
    let v_m: Vec<usize> = (0..30).collect();
    let pi = build_appr_matrix(mech.as_ref(), &g, &v_m, &params, NoiseRng::new(5)).unwrap();
    let outside = pi
        .rows
        .iter()
        .flat_map(|row| {
            let support = solve_appr_ista(&g, row.source, &params).unwrap().vector;
            row.entries.iter().filter(move |e| support.get(e.0) == 0.0).count().checked_sub(0)
        })
        .sum::<usize>();
    assert!(outside > 0);
}

#[test]
fn private_matrices_spend_exactly_the_structure_budget() {
    let g = sbm(3);
    let reg = MechanismRegistry::with_builtin();
    let v_m: Vec<usize> = (0..40).collect();
    let budget = PrivacyBudget { epsilon: 4.0, delta: 1e-3 };
    for name in ["em0", "em1", "gm"] {
        let mech = reg.build(name, &request(Some(budget), v_m.len())).unwrap();
        let pi = build_appr_matrix(mech.as_ref(), &g, &v_m, &ApprParams::default(), NoiseRng::new(9)).unwrap();
        let spent = pi.spent.unwrap();
        assert!((spent.epsilon - budget.epsilon).abs() < 1e-9, "{name}: {spent:?}");
        assert!((spent.delta - budget.delta).abs() < 1e-15, "{name}: {spent:?}");
        assert!(pi.rows.iter().all(|r| r.entries.len() <= 2));
        assert!(pi.rows.iter().all(|r| r.entries.iter().all(|e| e.1 >= 0.0)), "{name}");
    }
}

#[test]
fn features_rows_are_one_hot_and_free() {
    let g = sbm(4);
    let reg = MechanismRegistry::with_builtin();
    let mech = reg.build("features", &request(None, 20)).unwrap();
    let v_m: Vec<usize> = (10..30).collect();
    let pi = build_appr_matrix(mech.as_ref(), &g, &v_m, &ApprParams::default(), NoiseRng::new(1)).unwrap();
    assert_eq!(pi.spent, Some(PrivacyBudget::zero()));
    for (row, &s) in pi.rows.iter().zip(&v_m) {
        assert_eq!(row.entries, vec![(s, 1.0)]);
    }
}

#[test]
fn rows_replay_from_the_seed() {
    let g = sbm(5);
    let reg = MechanismRegistry::with_builtin();
    let budget = Some(PrivacyBudget { epsilon: 2.0, delta: 1e-3 });
    let v_m: Vec<usize> = (0..25).rev().collect();
    for name in ["em0", "em1", "gm"] {
        let mech = reg.build(name, &request(budget, v_m.len())).unwrap();
        let a = build_appr_matrix(mech.as_ref(), &g, &v_m, &ApprParams::default(), NoiseRng::new(77)).unwrap();
        let b = build_appr_matrix(mech.as_ref(), &g, &v_m, &ApprParams::default(), NoiseRng::new(77)).unwrap();
        let c = build_appr_matrix(mech.as_ref(), &g, &v_m, &ApprParams::default(), NoiseRng::new(78)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.rows, c.rows);
    }
}
