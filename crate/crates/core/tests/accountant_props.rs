use dpar::accountant::{
    calibrate_sigma, em_matrix_budget, gm_matrix_budget, optimal_compose, optimal_decompose, sgd_epsilon,
    split_budget_with_delta_share, total_budget, PrivacyBudget, SgdAccountParams,
};
use dpar::dp_appr::{EmConfig, EmOption, GmConfig};
use proptest::prelude::*;

proptest! {
    #[test]
    fn compose_decompose_round_trip(eps in 1e-3f64..10.0, m in 1usize..2000, log_delta in -10.0f64..-2.0) {
        let delta = 10f64.powf(log_delta);
        let total = optimal_compose(eps, m, delta).unwrap();
        prop_assert!((total.delta - 2.0 * m as f64 * delta).abs() <= 1e-18);
        let back = optimal_decompose(&total, m).unwrap();
        prop_assert!((back - eps).abs() <= 1e-9 * eps.max(1.0));
    }

    #[test]
    fn split_then_total_is_identity(
        eps in 0.1f64..50.0,
        delta in 1e-6f64..0.1,
        ratio in 0.0f64..=1.0,
        share in 0.0f64..=1.0,
        q in 0.01f64..=1.0,
    ) {
        let total = PrivacyBudget { epsilon: eps, delta };
        let (pr, sgd) = split_budget_with_delta_share(&total, ratio, q, share).unwrap();
        let back = total_budget(pr.epsilon, pr.delta, sgd.epsilon, sgd.delta, q).unwrap();
        prop_assert!((back.epsilon - eps).abs() <= 1e-12 * eps);
        prop_assert!((back.delta - delta).abs() <= 1e-15);
    }

    #[test]
    fn calibrated_sigma_meets_the_target(
        target in 0.2f64..20.0,
        q in 0.005f64..0.5,
        tau in 0.1f64..3.0,
        steps in 1usize..3000,
    ) {
        let delta = 1e-4;
        let sigma = calibrate_sigma(target, q, tau, steps, delta).unwrap();
        let at = |s: f64| sgd_epsilon(&SgdAccountParams { q, tau, sigma: s, steps, delta });
        prop_assert!(at(sigma) <= target);
        prop_assert!(at(sigma * (1.0 - 1e-5)) > target || sigma <= 1e-6);
    }

    #[test]
    fn matrix_budgets_grow_with_rows_and_row_eps(eps in 0.01f64..3.0, m in 1usize..500, k in 1usize..5) {
        let em = EmConfig { eps, eps_values: eps, delta: 1e-6, clip: 0.001, k, option: EmOption::NoisyValues };
        let gm = GmConfig { eps, delta: 1e-6, clip: 0.01, k };
        let a = em_matrix_budget(&em, m).unwrap().epsilon;
        prop_assert!(em_matrix_budget(&em, m + 1).unwrap().epsilon >= a);
        let em_up = EmConfig { eps: eps * 1.1, ..em };
        prop_assert!(em_matrix_budget(&em_up, m).unwrap().epsilon >= a);
        let b = gm_matrix_budget(&gm, m).unwrap().epsilon;
        prop_assert!(gm_matrix_budget(&gm, m + 1).unwrap().epsilon >= b);
        let gm_up = GmConfig { eps: eps * 1.1, ..gm };
        prop_assert!(gm_matrix_budget(&gm_up, m).unwrap().epsilon >= b);
        prop_assert!(a.is_finite() && a >= 0.0 && b.is_finite() && b >= 0.0);
    }
}
