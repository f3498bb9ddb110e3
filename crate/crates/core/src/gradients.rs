//! Monte-Carlo gradient estimators.
//!
//! For an episode `S_0, A_0, ..., S_T` with `S_0` safe, the single-episode
//! estimate of the gradient of `P(S_t safe for all t)` is
//!
//! ```text
//! G_1 * sum_{t=0}^{T-1} grad log pi(A_t | S_t),    G_t = prod_{u=t}^{T} 1(S_u safe)
//! ```
//!
//! so an episode that leaves the safe set after the start contributes nothing.
//! The value gradient uses REINFORCE with reward-to-go weights.

use crate::error::{Error, Result};
use crate::navenv::Trajectory;

/// A policy whose log-density gradient can be accumulated into a flat buffer.
pub trait ScoreFunction<S, A> {
    fn num_params(&self) -> usize;

    /// `out += weight * grad_theta log pi(action | state)`.
    fn accumulate_score(&self, state: &S, action: &A, weight: f64, out: &mut [f64]);

    /// Two weighted accumulations of the same score. Implementations with an
    /// expensive score may override this to evaluate it once.
    fn accumulate_score_pair(&self, state: &S, action: &A, weights: (f64, f64), outs: (&mut [f64], &mut [f64])) {
        self.accumulate_score(state, action, weights.0, outs.0);
        self.accumulate_score(state, action, weights.1, outs.1);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    pub vector: Vec<f64>,
    pub episodes_used: usize,
}

impl GradientEstimate {
    pub fn zeros(len: usize) -> Self {
        Self { vector: vec![0.0; len], episodes_used: 1 }
    }

    pub fn len(&self) -> usize {
        self.vector.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vector.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.vector.iter().all(|x| x.is_finite())
    }
}

/// `G_t` for `t = 0..=T`, computed right to left.
pub fn safety_products(safe_flags: &[bool]) -> Vec<f64> {
    let mut out = vec![0.0; safe_flags.len()];
    let mut tail = 1.0;
    for (g, &safe) in out.iter_mut().zip(safe_flags).rev() {
        tail *= if safe { 1.0 } else { 0.0 };
        *g = tail;
    }
    out
}

fn check_shape<S, A>(trajectory: &Trajectory<S, A>) -> Result<()> {
    if trajectory.is_consistent() {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected: trajectory.actions.len() + 1, found: trajectory.states.len() })
    }
}

/// Single-episode estimate of the gradient of the probability of staying safe.
pub fn constraint_grad_estimate<S, A, P>(trajectory: &Trajectory<S, A>, policy: &P) -> Result<GradientEstimate>
where
    P: ScoreFunction<S, A> + ?Sized,
{
    check_shape(trajectory)?;
    if !trajectory.safe_flags[0] {
        return Err(Error::UnsafeStart);
    }
    let mut est = GradientEstimate::zeros(policy.num_params());
    let g1 = trajectory.safe_flags[1..].iter().all(|&f| f);
    if g1 {
        for (s, a) in trajectory.states.iter().zip(&trajectory.actions) {
            policy.accumulate_score(s, a, 1.0, &mut est.vector);
        }
    }
    Ok(est)
}

/// REINFORCE estimate `sum_t score_t * R_t`, `R_t = sum_{u>=t} r_u`.
pub fn value_grad_estimate<S, A, P>(trajectory: &Trajectory<S, A>, policy: &P) -> Result<GradientEstimate>
where
    P: ScoreFunction<S, A> + ?Sized,
{
    value_grad_estimate_with_baseline(trajectory, policy, 0.0)
}

/// Reward-to-go REINFORCE with a constant baseline subtracted from every `R_t`.
pub fn value_grad_estimate_with_baseline<S, A, P>(
    trajectory: &Trajectory<S, A>,
    policy: &P,
    baseline: f64,
) -> Result<GradientEstimate>
where
    P: ScoreFunction<S, A> + ?Sized,
{
    check_shape(trajectory)?;
    let mut est = GradientEstimate::zeros(policy.num_params());
    let to_go = rewards_to_go(&trajectory.rewards);
    for ((s, a), r) in trajectory.states.iter().zip(&trajectory.actions).zip(&to_go) {
        let w = r - baseline;
        if w != 0.0 {
            policy.accumulate_score(s, a, w, &mut est.vector);
        }
    }
    Ok(est)
}

/// Value and constraint estimates for one episode, sharing score evaluations.
pub fn episode_gradients<S, A, P>(
    trajectory: &Trajectory<S, A>,
    policy: &P,
    baseline: f64,
) -> Result<(GradientEstimate, GradientEstimate)>
where
    P: ScoreFunction<S, A> + ?Sized,
{
    check_shape(trajectory)?;
    if !trajectory.safe_flags[0] {
        return Err(Error::UnsafeStart);
    }
    let n = policy.num_params();
    let mut value = GradientEstimate::zeros(n);
    let mut constraint = GradientEstimate::zeros(n);
    let g1 = if trajectory.safe_flags[1..].iter().all(|&f| f) { 1.0 } else { 0.0 };
    let to_go = rewards_to_go(&trajectory.rewards);
    for ((s, a), r) in trajectory.states.iter().zip(&trajectory.actions).zip(&to_go) {
        policy.accumulate_score_pair(s, a, (r - baseline, g1), (&mut value.vector, &mut constraint.vector));
    }
    Ok((value, constraint))
}

fn rewards_to_go(rewards: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc += r;
        *o = acc;
    }
    out
}

/// Coordinate-wise mean; `episodes_used` adds up.
pub fn batch_average(estimates: &[GradientEstimate]) -> Result<GradientEstimate> {
    let first = estimates.first().ok_or(Error::EmptyBatch)?;
    let n = first.len();
    let mut out = vec![0.0; n];
    let mut episodes = 0;
    for e in estimates {
        if e.len() != n {
            return Err(Error::LengthMismatch { expected: n, found: e.len() });
        }
        for (o, v) in out.iter_mut().zip(&e.vector) {
            *o += v;
        }
        episodes += e.episodes_used;
    }
    let k = estimates.len() as f64;
    out.iter_mut().for_each(|o| *o /= k);
    Ok(GradientEstimate { vector: out, episodes_used: episodes })
}

/// Per-coordinate standard error of the batch mean (zero for a single estimate).
pub fn batch_std_error(estimates: &[GradientEstimate]) -> Result<Vec<f64>> {
    let mean = batch_average(estimates)?;
    let k = estimates.len();
    if k < 2 {
        return Ok(vec![0.0; mean.len()]);
    }
    let mut ss = vec![0.0; mean.len()];
    for e in estimates {
        for ((s, v), m) in ss.iter_mut().zip(&e.vector).zip(&mean.vector) {
            *s += (v - m) * (v - m);
        }
    }
    let denom = (k as f64 - 1.0) * k as f64;
    Ok(ss.into_iter().map(|s| (s / denom).sqrt()).collect())
}
