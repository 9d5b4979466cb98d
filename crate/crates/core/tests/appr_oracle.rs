use dpar::appr::{solve_appr_ista, solve_ppr_dense, ApprParams, SolveStatus};
use dpar::graph::Graph;
use proptest::prelude::*;

fn graph_strategy() -> impl Strategy<Value = (Graph, usize)> {
    (2usize..=50, 0.0f64..0.5, any::<u64>()).prop_map(|(n, p, seed)| {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if r.random::<f64>() < p {
                    edges.push((u, v));
                }
            }
        }
        let s = r.random_range(0..n);
        (Graph::from_edges(n, &edges, vec![0.0; n], 1, vec![0; n], 1).unwrap(), s)
    })
}

fn tight(alpha: f64) -> ApprParams {
    ApprParams {
        alpha,
        rho: 1e-8,
        gamma: 1e-8,
        max_iters: 1_000_000,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ista_matches_dense((g, s) in graph_strategy(), alpha in 0.05f64..0.9) {
        let ista = solve_appr_ista(&g, s, &tight(alpha)).unwrap();
        let dense = solve_ppr_dense(&g, s, alpha).unwrap();
        let n = g.n_nodes();
        let dist: f64 = ista.vector.to_dense(n).iter().zip(dense.to_dense(n)).map(|(a, b)| (a - b).abs()).sum();
        prop_assert!(dist <= 1e-3, "l1 distance {dist}");
        prop_assert!(ista.status != SolveStatus::MaxIters);
    }

    #[test]
    fn dense_ppr_is_a_distribution((g, s) in graph_strategy(), alpha in 0.05f64..0.9) {
        let p = solve_ppr_dense(&g, s, alpha).unwrap();
        prop_assert!(p.entries.iter().all(|&(_, x)| x >= -1e-12));
        prop_assert!((p.l1_norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ista_output_is_nonnegative((g, s) in graph_strategy()) {
        let v = solve_appr_ista(&g, s, &ApprParams::default()).unwrap().vector;
        prop_assert!(v.entries.iter().all(|&(_, x)| x > 0.0));
        prop_assert!(v.get(s) > 0.0);
    }
}

#[test]
fn sparsity_shrinks_as_rho_grows() {
    use rand::{Rng, SeedableRng};
    let mut r = rand_chacha::ChaCha20Rng::seed_from_u64(11);
    let n = 200;
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if r.random::<f64>() < 0.03 {
                edges.push((u, v));
            }
        }
    }
    let g = Graph::from_edges(n, &edges, vec![0.0; n], 1, vec![0; n], 1).unwrap();
    let rhos = [1e-8, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2];
    let nnz: Vec<usize> = rhos
        .iter()
        .map(|&rho| {
            let p = ApprParams { rho, ..ApprParams::default() };
            solve_appr_ista(&g, 0, &p).unwrap().vector.nnz()
        })
        .collect();
    eprintln!("nnz by rho {rhos:?}: {nnz:?}");
    assert!(nnz.windows(2).all(|w| w[1] <= w[0]), "{nnz:?}");
    assert!(nnz[0] > nnz[nnz.len() - 1]);
}
