// Property tests for the belief machinery, checked against the independent
// oracles in common/.

mod common;

use ep_lab::belief::{
    bellman_optimal_value, obs_predictive, pomdp_sync_reduce, posterior, predict, Belief,
    FiniteEP,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model_from_seed(seed: u64) -> (FiniteEP, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ep = common::random_finite_ep(&mut rng, 4, 3, 3);
    (ep, rng)
}

proptest! {
    #[test]
    fn update_chain_matches_joint_enumeration(seed in any::<u64>(), len in 1usize..=3) {
        let (ep, mut rng) = model_from_seed(seed);
        let b0 = common::random_belief(&mut rng, ep.n_states());
        let steps: Vec<(usize, usize)> = (0..len)
            .map(|_| (rng.random_range(0..ep.n_sets()), rng.random_range(0..ep.n_obs())))
            .collect();
        let mut b = Belief::new(b0.clone()).unwrap();
        for &(a, y) in &steps {
            b = posterior(&predict(&b, a, &ep).unwrap(), y, &ep).unwrap();
        }
        let oracle = common::bayes_path_oracle(&ep, &b0, &steps).unwrap();
        let gap = common::l1(b.probs(), &oracle);
        prop_assert!(gap <= 1e-9, "L1 gap {gap} after {len} steps");
    }

    #[test]
    fn updates_and_predictives_normalize(seed in any::<u64>()) {
        let (ep, mut rng) = model_from_seed(seed);
        let b = Belief::new(common::random_belief(&mut rng, ep.n_states())).unwrap();
        let a = rng.random_range(0..ep.n_sets());
        let y = rng.random_range(0..ep.n_obs());
        let b_bar = predict(&b, a, &ep).unwrap();
        let pred = obs_predictive(&b, a, &ep).unwrap();
        let post = posterior(&b_bar, y, &ep).unwrap();
        let sums = [
            b_bar.probs().iter().sum::<f64>(),
            pred.iter().sum::<f64>(),
            post.probs().iter().sum::<f64>(),
        ];
        for s in sums {
            prop_assert!((s - 1.0).abs() <= 1e-12, "distribution sums to {s}");
        }
    }

    #[test]
    fn value_grows_with_horizon_when_utilities_nonnegative(seed in any::<u64>()) {
        let (mut ep, mut rng) = model_from_seed(seed);
        for row in &mut ep.u {
            for v in row {
                *v = v.abs();
            }
        }
        let b = Belief::new(common::random_belief(&mut rng, ep.n_states())).unwrap();
        let mut prev = 0.0;
        for h in 0..=3 {
            let (v, _) = bellman_optimal_value(&ep, &b, h).unwrap();
            prop_assert!(v >= prev - 1e-9, "V at horizon {h} dropped: {v} < {prev}");
            prev = v;
        }
    }

    // Power-of-two factors scale every float in the recursion exactly, so
    // the argmax must be preserved even through ties.
    #[test]
    fn argmax_stable_under_positive_utility_scaling(seed in any::<u64>(), h in 1u32..=3) {
        let (ep, mut rng) = model_from_seed(seed);
        let b = Belief::new(common::random_belief(&mut rng, ep.n_states())).unwrap();
        let (_, base) = bellman_optimal_value(&ep, &b, h).unwrap();
        for c in [0.25, 4.0] {
            let mut scaled = ep.clone();
            for row in &mut scaled.u {
                for v in row {
                    *v *= c;
                }
            }
            let (_, a) = bellman_optimal_value(&scaled, &b, h).unwrap();
            prop_assert_eq!(a, base, "argmax changed under utility scale {}", c);
        }
    }

    #[test]
    fn reduced_model_update_matches_textbook_filter(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pomdp = common::random_pomdp(&mut rng);
        let ep = pomdp_sync_reduce(&pomdp).unwrap();
        let b0 = common::random_belief(&mut rng, pomdp.state_labels.len());
        let a = rng.random_range(0..pomdp.action_labels.len());
        let y = rng.random_range(0..pomdp.obs_labels.len());
        let b = Belief::new(b0.clone()).unwrap();
        let got = posterior(&predict(&b, a, &ep).unwrap(), y, &ep).unwrap();
        let oracle = common::pomdp_update_oracle(&pomdp, &b0, a, y).unwrap();
        let gap = common::l1(got.probs(), &oracle);
        prop_assert!(gap <= 1e-12, "filter gap {gap}");
    }
}
