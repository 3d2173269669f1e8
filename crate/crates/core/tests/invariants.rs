mod oracles;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqmh_core::gibbs::{gibbs_conditional_mu0, FactorizedBinaryModel, GibbsRatioPopulation};
use seqmh_core::rwalk::{dp_error_and_usage, RandomWalkParams, TestShape};
use seqmh_core::{compute_mu0, exact_mh_test, sequential_mh_test, LogLikDiffPopulation, SequentialTestSpec, VecPopulation};

fn population() -> impl Strategy<Value = Vec<f64>> {
    (2usize..200).prop_flat_map(|n| prop::collection::vec(-3.0f64..3.0, n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn exhausted_test_matches_oracle(values in population(), m in 2usize..64, shift in -0.5f64..0.5, seed in any::<u64>()) {
        let n = values.len();
        let mu0 = values.iter().sum::<f64>() / n as f64 + shift * 0.1;
        let pop = VecPopulation(values.clone());
        let d = sequential_mh_test(&pop, mu0, &SequentialTestSpec::new(m.min(n).max(2), 0.0), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(d.n_used, n);
        prop_assert_eq!(d.accept, oracles::mean_exceeds(&values, mu0));
        prop_assert_eq!(d.accept, exact_mh_test(&pop, mu0).unwrap());
    }

    #[test]
    fn stopping_respects_batches(values in population(), m in 2usize..64, eps in 0.001f64..0.5, seed in any::<u64>()) {
        let n = values.len();
        let m = m.min(n);
        let pop = VecPopulation(values.clone());
        let mu0 = values[0];
        let d = sequential_mh_test(&pop, mu0, &SequentialTestSpec::new(m, eps), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(d.n_used == n || d.n_used == d.stages * m);
        prop_assert!(d.stages >= 1 && d.stages <= n.div_ceil(m));
        if d.n_used == n {
            prop_assert_eq!(d.accept, oracles::mean_exceeds(&values, mu0));
        }
    }

    /// Negating the population and the threshold mirrors the decision under the same subsampling order.
    #[test]
    fn negation_mirrors_decision(values in population(), m in 2usize..32, eps in 0.001f64..0.5, mu0 in -0.5f64..0.5, seed in any::<u64>()) {
        let m = m.min(values.len());
        let spec = SequentialTestSpec::new(m, eps);
        let a = sequential_mh_test(&VecPopulation(values.clone()), mu0, &spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let neg: Vec<f64> = values.iter().map(|v| -v).collect();
        let b = sequential_mh_test(&VecPopulation(neg), -mu0, &spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a.n_used, b.n_used);
        prop_assert_eq!(a.lbar, -b.lbar);
        if a.lbar != mu0 {
            prop_assert_ne!(a.accept, b.accept);
        }
    }

    #[test]
    fn mu0_increases_with_u(u1 in 1e-9f64..1.0, u2 in 1e-9f64..1.0, lpr in -5.0f64..5.0, lqr in -5.0f64..5.0, n in 1usize..10_000) {
        let (lo, hi) = if u1 < u2 { (u1, u2) } else { (u2, u1) };
        prop_assert!(compute_mu0(lo, lpr, lqr, n).unwrap() <= compute_mu0(hi, lpr, lqr, n).unwrap());
    }

    /// The Gibbs threshold turns "factor mean above mu0" into "u below the conditional".
    #[test]
    fn gibbs_threshold_reproduces_conditional(seed in 0u64..500, site in 0usize..5, state in 0u128..32, u in 0.001f64..0.999) {
        let model = FactorizedBinaryModel::dense_triples(5, 0.5, seed).unwrap();
        let factors: Vec<(Vec<usize>, Vec<f64>)> = model.factors().iter().map(|f| (f.scope.clone(), f.table.clone())).collect();
        let p = oracles::conditional_from_weights(&factors, site, state);
        let pop = VecPopulation(GibbsRatioPopulation::new(&model, site, state).unwrap().to_vec());
        let mu0 = gibbs_conditional_mu0(u, pop.size()).unwrap();
        // skip draws within rounding of the boundary
        prop_assume!((u - p).abs() > 1e-9);
        prop_assert_eq!(exact_mh_test(&pop, mu0).unwrap(), u < p);
    }

    #[test]
    fn dp_profile_is_a_distribution(mu_std in -6.0f64..6.0, pi1 in 0.05f64..0.5, eps in 0.005f64..0.5, alpha in 0.5f64..1.0) {
        let shape = TestShape::uniform(pi1, eps, alpha).unwrap();
        let p = dp_error_and_usage(&RandomWalkParams { mu_std, shape: shape.clone() }, 96).unwrap();
        prop_assert!((0.0..=0.5).contains(&p.error));
        prop_assert!((p.stop_mass.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.expected_usage >= shape.pi()[0] - 1e-12 && p.expected_usage <= 1.0 + 1e-12);
        let mirrored = dp_error_and_usage(&RandomWalkParams { mu_std: -mu_std, shape }, 96).unwrap();
        prop_assert!((p.error - mirrored.error).abs() < 1e-10);
        prop_assert!((p.expected_usage - mirrored.expected_usage).abs() < 1e-10);
    }
}
