use proptest::prelude::*;

use safepg::oracle::{
    enumerate_trajectories, exact_constraint_grad, exact_constraint_grad_recursive, exact_safety_probability,
    finite_diff_grad,
};
use safepg::{
    constraint_grad_estimate, evaluate, train, FiniteMdp, NavWorld, PolicyHyper, PolicyParams, RunConfig,
    TabularSoftmaxPolicy,
};

/// One safe state; action 0 stays, action 1 moves to an absorbing unsafe state.
fn cliff(horizon: usize) -> FiniteMdp {
    let text = format!("states 2\nactions 2\nhorizon {horizon}\nstart 0\nsafe 0\ntransitions\n1 0\n0 1\n0 1\n0 1\n");
    FiniteMdp::from_text(&text).unwrap()
}

#[test]
fn cliff_gradient_matches_hand_derivation() {
    // P = p^T with p = softmax(a, b)[0]; dP/da = T p^T (1 - p), dP/db = -dP/da
    let (a, b) = (0.4, -0.3);
    let policy = TabularSoftmaxPolicy::new(vec![vec![a, b], vec![0.0, 0.0]]).unwrap();
    let p = 1.0 / (1.0 + f64::exp(b - a));
    for horizon in 1..=5 {
        let mdp = cliff(horizon);
        let t = horizon as f64;
        let safe = exact_safety_probability(&mdp, &policy).unwrap();
        assert!((safe - p.powi(horizon as i32)).abs() < 1e-14);
        let d = t * p.powi(horizon as i32) * (1.0 - p);
        let want = [d, -d, 0.0, 0.0];
        for g in
            [exact_constraint_grad(&mdp, &policy).unwrap(), exact_constraint_grad_recursive(&mdp, &policy).unwrap()]
        {
            for (x, y) in g.iter().zip(want) {
                assert!((x - y).abs() < 1e-14, "horizon {horizon}: {g:?} vs {want:?}");
            }
        }
    }
}

#[test]
fn cliff_estimator_fires_only_on_the_all_stay_path() {
    let mdp = cliff(3);
    let policy = TabularSoftmaxPolicy::new(vec![vec![0.1, 0.2], vec![0.0, 0.0]]).unwrap();
    let mut nonzero = 0;
    for (traj, prob) in enumerate_trajectories(&mdp, &policy).unwrap() {
        if prob == 0.0 {
            continue;
        }
        let est = constraint_grad_estimate(&traj, &policy).unwrap();
        if est.vector.iter().any(|&x| x != 0.0) {
            nonzero += 1;
            assert!(traj.actions.iter().all(|&a| a == 0));
        }
    }
    assert_eq!(nonzero, 1);
}

#[test]
fn text_fixture_gradient_agrees_with_finite_differences() {
    let text = "\
states 3
actions 2
horizon 3
start 0
safe 0 1
transitions
0.7 0.2 0.1
0.1 0.5 0.4
0.3 0.6 0.1
0.0 0.5 0.5
0 0 1
0 0 1
";
    let mdp = FiniteMdp::from_text(text).unwrap();
    let policy = TabularSoftmaxPolicy::new(vec![vec![0.5, -0.5], vec![-1.0, 0.3], vec![0.0, 0.0]]).unwrap();
    let exact = exact_constraint_grad(&mdp, &policy).unwrap();
    let fd = finite_diff_grad(
        |x| exact_safety_probability(&mdp, &policy.with_flat_logits(x).unwrap()).unwrap(),
        policy.flat_logits(),
        1e-5,
    )
    .unwrap();
    for (a, b) in fd.iter().zip(&exact) {
        assert!((a - b).abs() < 1e-9, "{fd:?} vs {exact:?}");
    }
    assert_eq!(exact[4], 0.0);
    assert_eq!(exact[5], 0.0);
}

#[test]
fn zero_policy_evaluation_matches_closed_form() {
    // with zero mean, s_t = start + dt * (sum of t Gaussian actions), so
    // E|s_t - goal|^2 = |start - goal|^2 + t dt^2 (c0 + c1)
    let world = NavWorld::default();
    let policy = PolicyParams::from_hyper(&PolicyHyper::default()).unwrap();
    let r = evaluate(&policy, &world, 1000, 0).unwrap();
    let d0 = 8.0f64.powi(2) + 7.0f64.powi(2);
    let expected: f64 = -(0..=20).map(|t| d0 + t as f64 * 0.05f64.powi(2) * 1.0).sum::<f64>();
    assert!((r.avg_cumulative_reward - expected).abs() < 4.0 * r.reward_std_error, "{r:?} vs {expected}");
    assert_eq!(r.safety_probability, 1.0);
    assert!((r.mean_final_distance - d0.sqrt()).abs() < 0.05);
}

#[test]
fn short_training_run_improves_reward() {
    let mut config = RunConfig::default();
    config.train.episodes = 10_000;
    config.train.batch_size = 100;
    let world = NavWorld::default();
    let (params, history) = train(&config).unwrap();
    assert_eq!(history.rows.len(), 10);
    assert!(history.rows.windows(2).all(|w| w[0].episode < w[1].episode));
    let before = evaluate(&PolicyParams::from_hyper(&config.policy).unwrap(), &world, 200, 1).unwrap();
    let after = evaluate(&params, &world, 200, 1).unwrap();
    assert!(after.avg_cumulative_reward > before.avg_cumulative_reward + 500.0, "{before:?} -> {after:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn safety_probability_is_a_probability(seed in any::<u64>(), n in 2usize..=3, h in 1usize..=4, scale in 0.0f64..3.0) {
        let mdp = FiniteMdp::random(seed, n, 2, h).unwrap();
        let policy = TabularSoftmaxPolicy::random(seed ^ 1, n, 2, scale);
        let p = exact_safety_probability(&mdp, &policy).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&p));
        let total: f64 = enumerate_trajectories(&mdp, &policy).unwrap().iter().map(|(_, q)| q).sum();
        prop_assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn longer_horizons_are_never_safer(seed in any::<u64>(), h in 1usize..=4) {
        let mdp = FiniteMdp::random(seed, 3, 2, h).unwrap();
        let longer = mdp.clone().with_horizon(h + 1).unwrap();
        let policy = TabularSoftmaxPolicy::random(seed, 3, 2, 1.0);
        let a = exact_safety_probability(&mdp, &policy).unwrap();
        let b = exact_safety_probability(&longer, &policy).unwrap();
        prop_assert!(b <= a + 1e-12);
    }
}
