//! Fixed-penalty policy-gradient training.
//!
//! Each update moves the coefficients along
//! `step_size * (value_grad + lambda * constraint_grad)`, both terms being
//! batch averages of single-episode estimates. Episode `i` of a run always
//! draws from stream `(seed, i)`, so results do not depend on whether a batch
//! is simulated sequentially or in parallel.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradients::{batch_average, episode_gradients, GradientEstimate};
use crate::navenv::{sq_dist, NavWorld, Trajectory, WorldParams};
use crate::policy::{PolicyHyper, PolicyParams};
use crate::rng::{EpisodeStreams, StreamDomain};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    /// Penalty weight on the safety probability.
    pub lambda: f64,
    pub step_size: f64,
    /// Total training episodes.
    pub episodes: u64,
    /// Episodes per parameter update.
    pub batch_size: usize,
    pub eval_episodes: usize,
    pub seed: u64,
    /// Episodes between history rows.
    pub cadence: u64,
    /// Constant subtracted from every reward-to-go in the value gradient.
    pub baseline: f64,
    /// Target violation level; only used to report whether evaluation meets `1 - delta`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub parallel: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            lambda: 6.0,
            step_size: 0.002,
            episodes: 40_000,
            batch_size: 1,
            eval_episodes: 1000,
            seed: 0,
            cadence: 1000,
            baseline: 0.0,
            delta: None,
            parallel: false,
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub world: WorldParams,
    pub policy: PolicyHyper,
    pub train: TrainSettings,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(t.lambda >= 0.0 && t.lambda.is_finite()) {
            return bad("train.lambda must be a nonnegative number");
        }
        if !(t.step_size > 0.0 && t.step_size.is_finite()) {
            return bad("train.step_size must be positive");
        }
        if t.episodes == 0 {
            return bad("train.episodes must be at least 1");
        }
        if t.batch_size == 0 {
            return bad("train.batch_size must be at least 1");
        }
        if t.eval_episodes == 0 {
            return bad("train.eval_episodes must be at least 1");
        }
        if t.cadence == 0 {
            return bad("train.cadence must be at least 1");
        }
        if !t.baseline.is_finite() {
            return bad("train.baseline must be finite");
        }
        if let Some(d) = t.delta {
            if !(0.0..=1.0).contains(&d) {
                return bad("train.delta must lie in [0, 1]");
            }
        }
        NavWorld::new(self.world.clone())?;
        PolicyParams::from_hyper(&self.policy)?;
        Ok(())
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        let mut c = self.clone();
        c.train.lambda = lambda;
        c
    }
}

/// One history entry, summarizing the training episodes since the previous row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRow {
    /// Number of training episodes completed.
    pub episode: u64,
    pub avg_return: f64,
    /// Fraction of episodes in the window with every state safe.
    pub safety_probability: f64,
    /// Mean norm of the batch-averaged constraint gradient over the window's updates.
    pub constraint_grad_norm: f64,
    pub value_grad_norm: f64,
    pub wall_clock_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub rows: Vec<CheckpointRow>,
}

/// What an observer sees at every history row.
pub struct Progress<'a> {
    pub row: &'a CheckpointRow,
    pub params: &'a PolicyParams,
    /// Index of the next training episode (the stream counter).
    pub next_episode: u64,
}

/// A run that stopped early, with the parameters from the last successful update.
#[derive(Debug, Clone)]
pub struct TrainFailure {
    pub error: Error,
    pub last_good: PolicyParams,
    pub episode: u64,
}

impl std::fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "training failed after {} episodes: {}", self.episode, self.error)
    }
}

impl std::error::Error for TrainFailure {}

/// Batch averages of the value and constraint estimates.
///
/// `first_episode` only labels errors.
pub fn batch_gradients(
    params: &PolicyParams,
    batch: &[Trajectory],
    baseline: f64,
    first_episode: u64,
) -> Result<(GradientEstimate, GradientEstimate)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut values = Vec::with_capacity(batch.len());
    let mut constraints = Vec::with_capacity(batch.len());
    for (i, traj) in batch.iter().enumerate() {
        let (v, c) = episode_gradients(traj, params, baseline)?;
        if !v.is_finite() || !c.is_finite() {
            return Err(Error::NonFiniteGradient { episode: first_episode + i as u64 });
        }
        values.push(v);
        constraints.push(c);
    }
    Ok((batch_average(&values)?, batch_average(&constraints)?))
}

/// `params + step_size * (value + lambda * constraint)`.
pub fn apply_update(
    params: &PolicyParams,
    value: &GradientEstimate,
    constraint: &GradientEstimate,
    lambda: f64,
    step_size: f64,
) -> Result<PolicyParams> {
    if value.len() != constraint.len() {
        return Err(Error::LengthMismatch { expected: value.len(), found: constraint.len() });
    }
    let direction: Vec<f64> = value.vector.iter().zip(&constraint.vector).map(|(v, c)| v + lambda * c).collect();
    params.step_along(&direction, step_size)
}

/// One stochastic ascent step on `V + lambda * P(safe)` from a batch of
/// episodes generated under `params`.
pub fn regularized_update(
    params: &PolicyParams,
    batch: &[Trajectory],
    lambda: f64,
    step_size: f64,
) -> Result<PolicyParams> {
    let (value, constraint) = batch_gradients(params, batch, 0.0, 0)?;
    apply_update(params, &value, &constraint, lambda, step_size)
}

pub fn train(config: &RunConfig) -> Result<(PolicyParams, TrainHistory)> {
    train_with(config, |_| Ok(())).map_err(|f| f.error)
}

/// Runs training, calling `observer` after every history row.
pub fn train_with<F>(
    config: &RunConfig,
    mut observer: F,
) -> std::result::Result<(PolicyParams, TrainHistory), Box<TrainFailure>>
where
    F: FnMut(&Progress<'_>) -> Result<()>,
{
    let initial = PolicyParams::from_hyper(&config.policy);
    let fail = |error: Error, last_good: PolicyParams, episode| Box::new(TrainFailure { error, last_good, episode });
    let mut params = match (config.validate(), initial) {
        (Ok(()), Ok(p)) => p,
        (Err(e), _) | (_, Err(e)) => {
            let placeholder = PolicyParams::new(vec![], 1.0, vec![], [1.0, 1.0]).expect("empty policy");
            return Err(fail(e, placeholder, 0));
        }
    };
    let world = NavWorld::new(config.world.clone()).map_err(|e| fail(e, params.clone(), 0))?;
    let t = &config.train;
    let streams = EpisodeStreams::new(t.seed, StreamDomain::Train);
    let started = Instant::now();

    let mut history = TrainHistory::default();
    let mut window = Window::default();
    let mut done = 0u64;
    while done < t.episodes {
        let n = (t.batch_size as u64).min(t.episodes - done);
        let first = done;
        let run_episode = |i: u64| -> Result<(EpisodeSummary, GradientEstimate, GradientEstimate)> {
            let traj = world.rollout(&params, &mut streams.episode(i))?;
            let (v, c) = episode_gradients(&traj, &params, t.baseline)?;
            if !v.is_finite() || !c.is_finite() {
                return Err(Error::NonFiniteGradient { episode: i });
            }
            Ok((EpisodeSummary::of(&traj), v, c))
        };
        let results: Vec<Result<_>> = if t.parallel && n > 1 {
            (first..first + n).into_par_iter().map(run_episode).collect()
        } else {
            (first..first + n).map(run_episode).collect()
        };

        let mut values = Vec::with_capacity(n as usize);
        let mut constraints = Vec::with_capacity(n as usize);
        for r in results {
            let (summary, v, c) = r.map_err(|e| fail(e, params.clone(), done))?;
            window.add_episode(&summary);
            values.push(v);
            constraints.push(c);
        }
        let value = batch_average(&values).map_err(|e| fail(e, params.clone(), done))?;
        let constraint = batch_average(&constraints).map_err(|e| fail(e, params.clone(), done))?;
        window.add_update(value.norm(), constraint.norm());
        params = apply_update(&params, &value, &constraint, t.lambda, t.step_size)
            .map_err(|e| fail(e, params.clone(), done))?;
        done += n;

        if done / t.cadence > first / t.cadence || done == t.episodes {
            let row = window.flush(done, started.elapsed().as_secs_f64());
            observer(&Progress { row: &row, params: &params, next_episode: done })
                .map_err(|e| fail(e, params.clone(), done))?;
            history.rows.push(row);
        }
    }
    Ok((params, history))
}

struct EpisodeSummary {
    total_reward: f64,
    safe: bool,
}

impl EpisodeSummary {
    fn of(traj: &Trajectory) -> Self {
        Self { total_reward: traj.total_reward(), safe: traj.all_safe() }
    }
}

#[derive(Default)]
struct Window {
    episodes: u64,
    safe: u64,
    reward_sum: f64,
    updates: u64,
    value_norm_sum: f64,
    constraint_norm_sum: f64,
}

impl Window {
    fn add_episode(&mut self, s: &EpisodeSummary) {
        self.episodes += 1;
        self.safe += s.safe as u64;
        self.reward_sum += s.total_reward;
    }

    fn add_update(&mut self, value_norm: f64, constraint_norm: f64) {
        self.updates += 1;
        self.value_norm_sum += value_norm;
        self.constraint_norm_sum += constraint_norm;
    }

    fn flush(&mut self, episode: u64, wall_clock_secs: f64) -> CheckpointRow {
        let e = self.episodes.max(1) as f64;
        let u = self.updates.max(1) as f64;
        let row = CheckpointRow {
            episode,
            avg_return: self.reward_sum / e,
            safety_probability: self.safe as f64 / e,
            constraint_grad_norm: self.constraint_norm_sum / u,
            value_grad_norm: self.value_norm_sum / u,
            wall_clock_secs,
        };
        *self = Window::default();
        row
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub safety_probability: f64,
    pub safety_std_error: f64,
    pub avg_cumulative_reward: f64,
    pub reward_std_error: f64,
    /// Mean distance from the last state to the goal.
    pub mean_final_distance: f64,
}

impl EvalReport {
    pub fn meets(&self, delta: f64) -> bool {
        self.safety_probability >= 1.0 - delta
    }
}

/// Runs `eval_episodes` fresh episodes on the evaluation streams of `seed`.
pub fn evaluate(params: &PolicyParams, world: &NavWorld, eval_episodes: usize, seed: u64) -> Result<EvalReport> {
    if eval_episodes == 0 {
        return Err(Error::InvalidConfig("eval_episodes must be at least 1".into()));
    }
    let streams = EpisodeStreams::new(seed, StreamDomain::Eval);
    let outcomes: Vec<Result<(bool, f64, f64)>> = (0..eval_episodes as u64)
        .into_par_iter()
        .map(|i| {
            let traj = world.rollout(params, &mut streams.episode(i))?;
            let dist = sq_dist(traj.final_state(), world.goal()).sqrt();
            Ok((traj.all_safe(), traj.total_reward(), dist))
        })
        .collect();
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let n = eval_episodes as f64;
    let safe = outcomes.iter().filter(|o| o.0).count() as f64 / n;
    let rewards: Vec<f64> = outcomes.iter().map(|o| o.1).collect();
    let avg_reward = rewards.iter().sum::<f64>() / n;
    let reward_var =
        if eval_episodes > 1 { rewards.iter().map(|r| (r - avg_reward).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Ok(EvalReport {
        episodes: eval_episodes,
        safety_probability: safe,
        safety_std_error: (safe * (1.0 - safe) / n).sqrt(),
        avg_cumulative_reward: avg_reward,
        reward_std_error: (reward_var / n).sqrt(),
        mean_final_distance: outcomes.iter().map(|o| o.2).sum::<f64>() / n,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub outcome: std::result::Result<EvalReport, String>,
}

/// Trains and evaluates one fresh policy per λ; rows come back sorted by λ.
pub fn lambda_sweep(base: &RunConfig, lambdas: &[f64]) -> Result<Vec<SweepRow>> {
    lambda_sweep_with(base, lambdas, |config| {
        let (params, _) = train(config).map_err(|e| e.to_string())?;
        let world = NavWorld::new(config.world.clone()).map_err(|e| e.to_string())?;
        evaluate(&params, &world, config.train.eval_episodes, config.train.seed).map_err(|e| e.to_string())
    })
}

/// Sweep driver with a caller-supplied run; a failing row does not stop the others.
pub fn lambda_sweep_with<F>(base: &RunConfig, lambdas: &[f64], run: F) -> Result<Vec<SweepRow>>
where
    F: Fn(&RunConfig) -> std::result::Result<EvalReport, String> + Sync,
{
    if lambdas.is_empty() {
        return Err(Error::InvalidConfig("at least one lambda is required".into()));
    }
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let one = |&lambda: &f64| SweepRow { lambda, outcome: run(&base.with_lambda(lambda)) };
    Ok(if base.train.parallel { sorted.par_iter().map(one).collect() } else { sorted.iter().map(one).collect() })
}
