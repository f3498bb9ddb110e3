//! Gradient check suite.
//!
//! Each check compares an estimator or exact formula against an independent
//! route on seeded instances and reports the worst error seen. The suite backs
//! the `check-gradients` command and the acceptance tests.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::gradients::{batch_average, batch_std_error, constraint_grad_estimate, GradientEstimate};
use crate::oracle::{
    default_fixture, enumerate_trajectories, exact_constraint_grad, exact_constraint_grad_recursive,
    exact_safety_probability, finite_diff_grad, random_fixture, sample_trajectory, FiniteMdp, TabularSoftmaxPolicy,
    TabularTrajectory,
};
use crate::policy::PolicyParams;
use crate::rng::{EpisodeStreams, StreamDomain};

#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub fixtures: u64,
    pub base_seed: u64,
    pub mc_episodes: u64,
    pub score_triples: u64,
    pub fd_epsilon: f64,
    /// Relative distortion applied to every constraint estimate. Nonzero
    /// values exist to confirm the suite can fail.
    pub estimator_perturbation: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            fixtures: 20,
            base_seed: 1,
            mc_episodes: 100_000,
            score_triples: 100,
            fd_epsilon: 1e-5,
            estimator_perturbation: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub instances: u64,
    /// Worst error in the check's own metric (see `metric`).
    pub max_error: f64,
    pub tolerance: f64,
    pub metric: &'static str,
    /// Seed of the first instance that failed.
    pub failing_seed: Option<u64>,
    pub elapsed: Duration,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.failing_seed.is_none() && self.max_error.is_finite()
    }
}

pub fn run_all(opts: &CheckOptions) -> Vec<CheckOutcome> {
    vec![
        gradient_identity(opts),
        recursion_identity(opts),
        estimator_unbiased(opts),
        estimator_sampling(opts),
        gaussian_score(opts),
    ]
}

fn fixture_seeds(opts: &CheckOptions) -> impl Iterator<Item = u64> {
    opts.base_seed..opts.base_seed + opts.fixtures
}

struct Tally {
    worst: f64,
    failing: Option<u64>,
}

impl Tally {
    fn new() -> Self {
        Self { worst: 0.0, failing: None }
    }

    fn record(&mut self, seed: u64, err: f64, tol: f64) {
        if err.is_nan() || err > self.worst {
            self.worst = err;
        }
        if self.failing.is_none() && (err.is_nan() || err >= tol) {
            self.failing = Some(seed);
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest coordinate error scaled by `|g| + floor / rel`, so that `< rel`
/// means `|diff_i| < rel * |g| + floor` for every coordinate.
pub fn scaled_error(approx: &[f64], exact: &[f64], rel: f64, floor: f64) -> f64 {
    max_abs_diff(approx, exact) / (norm(exact) + floor / rel)
}

fn perturbed(mut est: GradientEstimate, amount: f64) -> GradientEstimate {
    if amount != 0.0 {
        est.vector.iter_mut().for_each(|x| *x *= 1.0 + amount);
    }
    est
}

/// Exact gradient against central differences of the exact safety probability.
pub fn gradient_identity(opts: &CheckOptions) -> CheckOutcome {
    let start = Instant::now();
    let tol = 1e-6;
    let mut tally = Tally::new();
    for seed in fixture_seeds(opts) {
        let (mdp, policy) = random_fixture(seed);
        let err = (|| -> crate::Result<f64> {
            let exact = exact_constraint_grad(&mdp, &policy)?;
            let fd = finite_diff_grad(
                |x| policy.with_flat_logits(x).and_then(|p| exact_safety_probability(&mdp, &p)).unwrap_or(f64::NAN),
                policy.flat_logits(),
                opts.fd_epsilon,
            )?;
            Ok(scaled_error(&fd, &exact, tol, 1e-9))
        })()
        .unwrap_or(f64::INFINITY);
        tally.record(seed, err, tol);
    }
    CheckOutcome {
        name: "safety-gradient vs finite differences",
        instances: opts.fixtures,
        max_error: tally.worst,
        tolerance: tol,
        metric: "max |diff| / (|grad| + 1e-3)",
        failing_seed: tally.failing,
        elapsed: start.elapsed(),
    }
}

/// Backward recursion against path enumeration.
pub fn recursion_identity(opts: &CheckOptions) -> CheckOutcome {
    let start = Instant::now();
    let tol = 1e-10;
    let mut tally = Tally::new();
    for seed in fixture_seeds(opts) {
        let (mdp, policy) = random_fixture(seed);
        let err = match (exact_constraint_grad(&mdp, &policy), exact_constraint_grad_recursive(&mdp, &policy)) {
            (Ok(a), Ok(b)) => max_abs_diff(&a, &b),
            _ => f64::INFINITY,
        };
        tally.record(seed, err, tol);
    }
    CheckOutcome {
        name: "recursive gradient vs enumeration",
        instances: opts.fixtures,
        max_error: tally.worst,
        tolerance: tol,
        metric: "max |diff|",
        failing_seed: tally.failing,
        elapsed: start.elapsed(),
    }
}

/// Probability-weighted mean of the single-episode estimator over every path.
pub fn enumerated_estimator_mean(
    mdp: &FiniteMdp,
    policy: &TabularSoftmaxPolicy,
    perturbation: f64,
) -> crate::Result<Vec<f64>> {
    let mut mean = vec![0.0; policy.flat_logits().len()];
    for (traj, p) in enumerate_trajectories(mdp, policy)? {
        let est = perturbed(constraint_grad_estimate(&traj, policy)?, perturbation);
        for (m, e) in mean.iter_mut().zip(&est.vector) {
            *m += p * e;
        }
    }
    Ok(mean)
}

/// Exact expectation of the single-episode estimator against the exact gradient.
pub fn estimator_unbiased(opts: &CheckOptions) -> CheckOutcome {
    let start = Instant::now();
    let tol = 1e-12;
    let mut tally = Tally::new();
    for seed in fixture_seeds(opts) {
        let (mdp, policy) = random_fixture(seed);
        let err = match (
            enumerated_estimator_mean(&mdp, &policy, opts.estimator_perturbation),
            exact_constraint_grad(&mdp, &policy),
        ) {
            (Ok(m), Ok(e)) => max_abs_diff(&m, &e),
            _ => f64::INFINITY,
        };
        tally.record(seed, err, tol);
    }
    CheckOutcome {
        name: "estimator expectation vs exact gradient",
        instances: opts.fixtures,
        max_error: tally.worst,
        tolerance: tol,
        metric: "max |diff|",
        failing_seed: tally.failing,
        elapsed: start.elapsed(),
    }
}

/// Sample mean and standard error of the estimator over `episodes` sampled
/// episodes of `mdp`.
pub fn sampled_estimator_mean(
    mdp: &FiniteMdp,
    policy: &TabularSoftmaxPolicy,
    episodes: u64,
    seed: u64,
    perturbation: f64,
) -> crate::Result<(Vec<f64>, Vec<f64>)> {
    let streams = EpisodeStreams::new(seed, StreamDomain::Oracle);
    let ests = (0..episodes)
        .map(|i| {
            let traj: TabularTrajectory = sample_trajectory(mdp, policy, &mut streams.episode(i))?;
            Ok(perturbed(constraint_grad_estimate(&traj, policy)?, perturbation))
        })
        .collect::<crate::Result<Vec<_>>>()?;
    Ok((batch_average(&ests)?.vector, batch_std_error(&ests)?))
}

/// Monte-Carlo mean on the default fixture within 4 standard errors per coordinate.
pub fn estimator_sampling(opts: &CheckOptions) -> CheckOutcome {
    let start = Instant::now();
    let (mdp, policy) = default_fixture();
    let seed = opts.base_seed;
    let err = match (
        sampled_estimator_mean(&mdp, &policy, opts.mc_episodes, seed, opts.estimator_perturbation),
        exact_constraint_grad(&mdp, &policy),
    ) {
        (Ok((mean, se)), Ok(exact)) => mean
            .iter()
            .zip(&se)
            .zip(&exact)
            .map(|((m, s), e)| {
                let d = (m - e).abs();
                if d <= 1e-12 {
                    0.0
                } else {
                    d / s
                }
            })
            .fold(0.0, f64::max),
        _ => f64::INFINITY,
    };
    let mut tally = Tally::new();
    tally.record(seed, err, 4.0);
    CheckOutcome {
        name: "Monte-Carlo estimator vs exact gradient",
        instances: 1,
        max_error: tally.worst,
        tolerance: 4.0,
        metric: "max |diff| / std error",
        failing_seed: tally.failing,
        elapsed: start.elapsed(),
    }
}

/// A random Gaussian-RBF policy with a state near its kernels and an action
/// drawn around the mean.
pub fn random_score_triple(seed: u64) -> (PolicyParams, [f64; 2], [f64; 2]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(1..=8);
    let bandwidth = rng.random_range(0.3..1.5);
    let centers: Vec<[f64; 2]> = (0..k).map(|_| [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)]).collect();
    let coefficients: Vec<[f64; 2]> = (0..k)
        .map(|_| [2.0 * rng.sample::<f64, _>(StandardNormal), 2.0 * rng.sample::<f64, _>(StandardNormal)])
        .collect();
    let cov = [rng.random_range(0.2..2.0), rng.random_range(0.2..2.0)];
    let policy = PolicyParams::new(centers.clone(), bandwidth, coefficients, cov).expect("valid random policy");
    let anchor = centers[rng.random_range(0..k)];
    let state = [
        anchor[0] + bandwidth * rng.sample::<f64, _>(StandardNormal),
        anchor[1] + bandwidth * rng.sample::<f64, _>(StandardNormal),
    ];
    let mean = policy.mean(state);
    let action = [
        mean[0] + cov[0].sqrt() * rng.sample::<f64, _>(StandardNormal),
        mean[1] + cov[1].sqrt() * rng.sample::<f64, _>(StandardNormal),
    ];
    (policy, state, action)
}

/// Analytic Gaussian score against central differences of `log_prob`.
pub fn gaussian_score(opts: &CheckOptions) -> CheckOutcome {
    let start = Instant::now();
    let tol = 1e-5;
    let mut tally = Tally::new();
    for seed in opts.base_seed..opts.base_seed + opts.score_triples {
        let (policy, state, action) = random_score_triple(seed);
        let score = policy.score(state, action);
        let fd = finite_diff_grad(
            |x| policy.with_flat_coefficients(x).map_or(f64::NAN, |p| p.log_prob(state, action)),
            policy.flat_coefficients(),
            opts.fd_epsilon,
        );
        let err = match fd {
            Ok(fd) => {
                let diff: Vec<f64> = fd.iter().zip(&score).map(|(a, b)| a - b).collect();
                norm(&diff) / norm(&score).max(1e-12)
            }
            Err(_) => f64::INFINITY,
        };
        tally.record(seed, err, tol);
    }
    CheckOutcome {
        name: "Gaussian score vs finite differences",
        instances: opts.score_triples,
        max_error: tally.worst,
        tolerance: tol,
        metric: "|diff| / |score|",
        failing_seed: tally.failing,
        elapsed: start.elapsed(),
    }
}
