//! Exact reference computations on small tabular MDPs.
//!
//! With a finite state space and a softmax policy every trajectory can be
//! enumerated together with its probability, which gives the safety
//! probability and its gradient with no sampling error. These are the ground
//! truth the Monte-Carlo estimators in [`crate::gradients`] are checked against.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gradients::ScoreFunction;
use crate::navenv::Trajectory;

/// Largest number of paths `enumerate_trajectories` will visit.
pub const MAX_PATHS: u128 = 1_000_000;

pub type TabularTrajectory = Trajectory<usize, usize>;

#[derive(Clone, Debug, PartialEq)]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    /// Flat `[state][action][next]`.
    transition: Vec<f64>,
    safe: Vec<bool>,
    rewards: Vec<f64>,
    start_state: usize,
    horizon: usize,
}

impl FiniteMdp {
    /// `transition[s][a][s']`; every row must sum to one within 1e-12.
    pub fn new(transition: Vec<Vec<Vec<f64>>>, safe_set: &[usize], start_state: usize, horizon: usize) -> Result<Self> {
        let n_states = transition.len();
        let n_actions = transition.first().map_or(0, Vec::len);
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidMdp("need at least one state and one action".into()));
        }
        let mut flat = Vec::with_capacity(n_states * n_actions * n_states);
        for (s, rows) in transition.iter().enumerate() {
            if rows.len() != n_actions {
                return Err(Error::InvalidMdp(format!("state {s} has {} actions", rows.len())));
            }
            for (a, row) in rows.iter().enumerate() {
                check_row(row, n_states).map_err(|m| Error::InvalidMdp(format!("row ({s}, {a}): {m}")))?;
                flat.extend_from_slice(row);
            }
        }
        let mut safe = vec![false; n_states];
        for &s in safe_set {
            *safe.get_mut(s).ok_or_else(|| Error::InvalidMdp(format!("safe state {s} out of range")))? = true;
        }
        if start_state >= n_states || !safe[start_state] {
            return Err(Error::InvalidMdp("start state must be a safe state".into()));
        }
        if horizon == 0 {
            return Err(Error::InvalidMdp("horizon must be positive".into()));
        }
        Ok(Self { n_states, n_actions, transition: flat, safe, rewards: vec![0.0; n_states], start_state, horizon })
    }

    /// Per-state rewards, collected at every time step including the last.
    pub fn with_rewards(mut self, rewards: Vec<f64>) -> Result<Self> {
        if rewards.len() != self.n_states {
            return Err(Error::LengthMismatch { expected: self.n_states, found: rewards.len() });
        }
        self.rewards = rewards;
        Ok(self)
    }

    /// Moves the start without checking that it is safe. Only useful for
    /// exercising the degenerate case.
    pub fn with_start_state_unchecked(mut self, start: usize) -> Self {
        assert!(start < self.n_states);
        self.start_state = start;
        self
    }

    pub fn with_horizon(mut self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidMdp("horizon must be positive".into()));
        }
        self.horizon = horizon;
        Ok(self)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn start_state(&self) -> usize {
        self.start_state
    }

    pub fn is_safe(&self, s: usize) -> bool {
        self.safe[s]
    }

    pub fn reward(&self, s: usize) -> f64 {
        self.rewards[s]
    }

    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + next]
    }

    fn row(&self, s: usize, a: usize) -> &[f64] {
        let i = (s * self.n_actions + a) * self.n_states;
        &self.transition[i..i + self.n_states]
    }

    /// Random instance: start 0 is safe, every other state is safe with
    /// probability 1/2, transition rows are normalized uniforms with some
    /// entries zeroed.
    pub fn random(seed: u64, n_states: usize, n_actions: usize, horizon: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut transition = vec![vec![vec![0.0; n_states]; n_actions]; n_states];
        for row in transition.iter_mut().flatten() {
            random_row(&mut rng, row);
        }
        let safe: Vec<usize> = (0..n_states).filter(|&s| s == 0 || rng.random_bool(0.5)).collect();
        Self::new(transition, &safe, 0, horizon)
    }

    /// Parses the plain-text description:
    ///
    /// ```text
    /// # comment
    /// states 3
    /// actions 2
    /// horizon 3
    /// start 0
    /// safe 0 1
    /// rewards 0 0 -1        (optional)
    /// transitions
    /// 0.7 0.2 0.1           (one row per (state, action), state-major)
    /// ...
    /// ```
    pub fn from_text(text: &str) -> Result<Self> {
        let err = |line: usize, msg: &str| Error::InvalidMdp(format!("line {line}: {msg}"));
        let mut n_states = None;
        let mut n_actions = None;
        let mut horizon = None;
        let mut start = None;
        let mut safe = None;
        let mut rewards = None;
        let mut rows: Option<Vec<Vec<f64>>> = None;

        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut words = line.split_whitespace();
            let head = words.next().unwrap_or_default();
            let rest: Vec<&str> = words.collect();
            if let Some(rows) = rows.as_mut() {
                let row = parse_floats(line).map_err(|m| err(lineno, &m))?;
                rows.push(row);
                continue;
            }
            let single = |name: &str| -> Result<usize> {
                match rest.as_slice() {
                    [v] => v.parse().map_err(|_| err(lineno, &format!("{name} expects an integer"))),
                    _ => Err(err(lineno, &format!("{name} expects one value"))),
                }
            };
            match head {
                "states" => n_states = Some(single("states")?),
                "actions" => n_actions = Some(single("actions")?),
                "horizon" => horizon = Some(single("horizon")?),
                "start" => start = Some(single("start")?),
                "safe" => {
                    let list: std::result::Result<Vec<usize>, _> = rest.iter().map(|v| v.parse()).collect();
                    safe = Some(list.map_err(|_| err(lineno, "safe expects state indices"))?);
                }
                "rewards" => rewards = Some(parse_floats(&rest.join(" ")).map_err(|m| err(lineno, &m))?),
                "transitions" if rest.is_empty() => rows = Some(Vec::new()),
                other => return Err(err(lineno, &format!("unknown key `{other}`"))),
            }
        }

        let missing = |k: &str| Error::InvalidMdp(format!("missing `{k}`"));
        let n_states = n_states.ok_or_else(|| missing("states"))?;
        let n_actions = n_actions.ok_or_else(|| missing("actions"))?;
        let rows = rows.ok_or_else(|| missing("transitions"))?;
        if rows.len() != n_states * n_actions {
            return Err(Error::InvalidMdp(format!(
                "expected {} transition rows, found {}",
                n_states * n_actions,
                rows.len()
            )));
        }
        let mut it = rows.into_iter();
        let transition: Vec<Vec<Vec<f64>>> =
            (0..n_states).map(|_| (0..n_actions).map(|_| it.next().unwrap()).collect()).collect();
        let mdp = Self::new(
            transition,
            &safe.ok_or_else(|| missing("safe"))?,
            start.unwrap_or(0),
            horizon.ok_or_else(|| missing("horizon"))?,
        )?;
        match rewards {
            Some(r) => mdp.with_rewards(r),
            None => Ok(mdp),
        }
    }

    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let safe: Vec<String> = (0..self.n_states).filter(|&s| self.safe[s]).map(|s| s.to_string()).collect();
        let rewards: Vec<String> = self.rewards.iter().map(|r| format!("{r:?}")).collect();
        writeln!(out, "states {}", self.n_states).unwrap();
        writeln!(out, "actions {}", self.n_actions).unwrap();
        writeln!(out, "horizon {}", self.horizon).unwrap();
        writeln!(out, "start {}", self.start_state).unwrap();
        writeln!(out, "safe {}", safe.join(" ")).unwrap();
        writeln!(out, "rewards {}", rewards.join(" ")).unwrap();
        writeln!(out, "transitions").unwrap();
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row: Vec<String> = self.row(s, a).iter().map(|p| format!("{p:?}")).collect();
                writeln!(out, "{}", row.join(" ")).unwrap();
            }
        }
        out
    }
}

fn check_row(row: &[f64], n_states: usize) -> std::result::Result<(), String> {
    if row.len() != n_states {
        return Err(format!("expected {n_states} entries, found {}", row.len()));
    }
    if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err("probabilities must lie in [0, 1]".into());
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(format!("row sums to {total}"));
    }
    Ok(())
}

fn parse_floats(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split_whitespace().map(|v| v.parse::<f64>().map_err(|_| format!("`{v}` is not a number"))).collect()
}

fn random_row(rng: &mut ChaCha8Rng, row: &mut [f64]) {
    loop {
        for p in row.iter_mut() {
            *p = if rng.random_bool(0.2) { 0.0 } else { rng.random::<f64>() };
        }
        let total: f64 = row.iter().sum();
        if total > 1e-3 {
            row.iter_mut().for_each(|p| *p /= total);
            // push the rounding residue into the largest entry
            let residue = 1.0 - row.iter().sum::<f64>();
            let imax = (0..row.len()).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap();
            row[imax] += residue;
            return;
        }
    }
}

/// Softmax policy over a table of logits, flat layout `state * n_actions + action`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularSoftmaxPolicy {
    n_states: usize,
    n_actions: usize,
    logits: Vec<f64>,
}

impl TabularSoftmaxPolicy {
    pub fn new(logits: Vec<Vec<f64>>) -> Result<Self> {
        let n_states = logits.len();
        let n_actions = logits.first().map_or(0, Vec::len);
        if n_states == 0 || n_actions == 0 || logits.iter().any(|r| r.len() != n_actions) {
            return Err(Error::InvalidPolicy("logit table must be rectangular and nonempty".into()));
        }
        Ok(Self { n_states, n_actions, logits: logits.concat() })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, logits: vec![0.0; n_states * n_actions] }
    }

    pub fn random(seed: u64, n_states: usize, n_actions: usize, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = (0..n_states * n_actions).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        Self { n_states, n_actions, logits }
    }

    pub fn flat_logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn with_flat_logits(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.logits.len() {
            return Err(Error::LengthMismatch { expected: self.logits.len(), found: flat.len() });
        }
        Ok(Self { logits: flat.to_vec(), ..self.clone() })
    }

    pub fn probs(&self, s: usize) -> Vec<f64> {
        let row = &self.logits[s * self.n_actions..(s + 1) * self.n_actions];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        sample_index(&self.probs(s), rng)
    }

    fn matches(&self, mdp: &FiniteMdp) -> Result<()> {
        if self.n_states != mdp.n_states || self.n_actions != mdp.n_actions {
            return Err(Error::InvalidPolicy(format!(
                "policy is {}x{}, MDP is {}x{}",
                self.n_states, self.n_actions, mdp.n_states, mdp.n_actions
            )));
        }
        Ok(())
    }
}

impl ScoreFunction<usize, usize> for TabularSoftmaxPolicy {
    fn num_params(&self) -> usize {
        self.logits.len()
    }

    fn accumulate_score(&self, state: &usize, action: &usize, weight: f64, out: &mut [f64]) {
        let probs = self.probs(*state);
        let base = state * self.n_actions;
        for (b, p) in probs.iter().enumerate() {
            let indicator = if b == *action { 1.0 } else { 0.0 };
            out[base + b] += weight * (indicator - p);
        }
    }
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding gap above the cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Samples one episode of the tabular MDP.
pub fn sample_trajectory<R: Rng + ?Sized>(
    mdp: &FiniteMdp,
    policy: &TabularSoftmaxPolicy,
    rng: &mut R,
) -> Result<TabularTrajectory> {
    policy.matches(mdp)?;
    let mut s = mdp.start_state;
    let mut states = vec![s];
    let mut actions = Vec::with_capacity(mdp.horizon);
    for _ in 0..mdp.horizon {
        let a = policy.sample(s, rng);
        s = sample_index(mdp.row(s, a), rng);
        actions.push(a);
        states.push(s);
    }
    Ok(finish(mdp, states, actions))
}

fn finish(mdp: &FiniteMdp, states: Vec<usize>, actions: Vec<usize>) -> TabularTrajectory {
    let rewards = states.iter().map(|&s| mdp.rewards[s]).collect();
    let safe_flags = states.iter().map(|&s| mdp.safe[s]).collect();
    Trajectory { states, actions, rewards, safe_flags }
}

/// Every state-action path of length `horizon` from the start state, with its
/// exact probability. Zero-probability paths are included.
pub fn enumerate_trajectories(mdp: &FiniteMdp, policy: &TabularSoftmaxPolicy) -> Result<Vec<(TabularTrajectory, f64)>> {
    policy.matches(mdp)?;
    let branching = (mdp.n_states * mdp.n_actions) as u128;
    let paths = (0..mdp.horizon).try_fold(1u128, |acc, _| acc.checked_mul(branching));
    match paths {
        Some(p) if p <= MAX_PATHS => {}
        other => return Err(Error::EnumerationTooLarge { paths: other.unwrap_or(u128::MAX), limit: MAX_PATHS }),
    }
    let probs: Vec<Vec<f64>> = (0..mdp.n_states).map(|s| policy.probs(s)).collect();
    let mut out = Vec::new();
    let mut states = vec![mdp.start_state];
    let mut actions = Vec::new();
    extend_paths(mdp, &probs, 1.0, &mut states, &mut actions, &mut out);
    Ok(out)
}

fn extend_paths(
    mdp: &FiniteMdp,
    probs: &[Vec<f64>],
    prob: f64,
    states: &mut Vec<usize>,
    actions: &mut Vec<usize>,
    out: &mut Vec<(TabularTrajectory, f64)>,
) {
    if actions.len() == mdp.horizon {
        out.push((finish(mdp, states.clone(), actions.clone()), prob));
        return;
    }
    let s = *states.last().unwrap();
    for a in 0..mdp.n_actions {
        for next in 0..mdp.n_states {
            actions.push(a);
            states.push(next);
            extend_paths(mdp, probs, prob * probs[s][a] * mdp.prob(s, a, next), states, actions, out);
            states.pop();
            actions.pop();
        }
    }
}

/// `P(S_t safe for t = 0..=T)` by summing over enumerated paths.
pub fn exact_safety_probability(mdp: &FiniteMdp, policy: &TabularSoftmaxPolicy) -> Result<f64> {
    Ok(enumerate_trajectories(mdp, policy)?.iter().filter(|(traj, _)| traj.all_safe()).map(|(_, p)| p).sum())
}

/// Expected sum of rewards over `t = 0..=T`.
pub fn exact_expected_return(mdp: &FiniteMdp, policy: &TabularSoftmaxPolicy) -> Result<f64> {
    Ok(enumerate_trajectories(mdp, policy)?.iter().map(|(traj, p)| p * traj.total_reward()).sum())
}

/// Gradient of the safety probability with respect to the flat logits,
/// differentiating each path probability `prod pi(a_t|s_t) P(s_{t+1}|s_t,a_t)`
/// directly.
pub fn exact_constraint_grad(mdp: &FiniteMdp, policy: &TabularSoftmaxPolicy) -> Result<Vec<f64>> {
    let na = mdp.n_actions;
    let probs: Vec<Vec<f64>> = (0..mdp.n_states).map(|s| policy.probs(s)).collect();
    let mut grad = vec![0.0; mdp.n_states * na];
    for (traj, p) in enumerate_trajectories(mdp, policy)? {
        if p == 0.0 || !traj.all_safe() {
            continue;
        }
        for (&s, &a) in traj.states.iter().zip(&traj.actions) {
            // d/dl[s][b] log softmax(l[s])[a] = 1(a == b) - pi(b|s)
            for b in 0..na {
                grad[s * na + b] -= p * probs[s][b];
            }
            grad[s * na + a] += p;
        }
    }
    Ok(grad)
}

/// Same gradient, computed by the backward recursion over conditional
/// expectations `h_t(s) = E[G_t | S_{t-1} = s]`:
///
/// ```text
/// grad h_T(s) = E[G_T grad log pi(A_{T-1}|s) | S_{T-1} = s]
/// grad h_t(s) = E[grad h_{t+1}(S_t) 1(S_t safe) | s] + E[G_t grad log pi(A_{t-1}|s) | s]
/// ```
///
/// and `grad P = 1(S_0 safe) grad h_1(S_0)`. Runs in `O(T |S|^2 |A|)` without
/// enumerating paths.
pub fn exact_constraint_grad_recursive(mdp: &FiniteMdp, policy: &TabularSoftmaxPolicy) -> Result<Vec<f64>> {
    policy.matches(mdp)?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let dim = ns * na;
    let probs: Vec<Vec<f64>> = (0..ns).map(|s| policy.probs(s)).collect();
    let safe = |s: usize| if mdp.safe[s] { 1.0 } else { 0.0 };

    // Continuation values after landing in `next`: 1 at the boundary.
    let mut h_next = vec![1.0; ns];
    let mut dh_next = vec![vec![0.0; dim]; ns];

    for _t in (1..=mdp.horizon).rev() {
        let mut h = vec![0.0; ns];
        let mut dh = vec![vec![0.0; dim]; ns];
        for s in 0..ns {
            for a in 0..na {
                let pa = probs[s][a];
                // E[G_t | S_{t-1} = s, A_{t-1} = a]
                let mut q = 0.0;
                for next in 0..ns {
                    let w = mdp.prob(s, a, next) * safe(next);
                    if w == 0.0 {
                        continue;
                    }
                    q += w * h_next[next];
                    for (d, dn) in dh[s].iter_mut().zip(&dh_next[next]) {
                        *d += pa * w * dn;
                    }
                }
                h[s] += pa * q;
                // score-function term
                for b in 0..na {
                    let indicator = if a == b { 1.0 } else { 0.0 };
                    dh[s][s * na + b] += pa * q * (indicator - probs[s][b]);
                }
            }
        }
        h_next = h;
        dh_next = dh;
    }

    let s0 = mdp.start_state;
    Ok(dh_next[s0].iter().map(|d| safe(s0) * d).collect())
}

/// Central differences `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)`.
pub fn finite_diff_grad<F>(mut objective: F, params: &[f64], epsilon: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidConfig("finite-difference epsilon must be positive".into()));
    }
    let mut x = params.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + epsilon;
        let plus = objective(&x);
        x[i] = orig - epsilon;
        let minus = objective(&x);
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFiniteObjective { index: i });
        }
        grad.push((plus - minus) / (2.0 * epsilon));
    }
    Ok(grad)
}

/// Seeded random instance: 2 or 3 states, 2 actions, horizon 1 to 4.
pub fn random_fixture(seed: u64) -> (FiniteMdp, TabularSoftmaxPolicy) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f1c7_u64);
    let n_states = rng.random_range(2..=3);
    let horizon = rng.random_range(1..=4);
    let mdp = FiniteMdp::random(rng.random(), n_states, 2, horizon).expect("random MDP is valid");
    let policy = TabularSoftmaxPolicy::random(rng.random(), n_states, 2, 1.0);
    (mdp, policy)
}

/// Three states (0 safe start, 1 safe, 2 unsafe and absorbing), two actions,
/// horizon 3, with seeded transitions and logits. Action 0 is the cautious one
/// (unsafe with probability 0.02 to 0.15), action 1 the risky one (0.3 to 0.6).
pub fn default_fixture() -> (FiniteMdp, TabularSoftmaxPolicy) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut transition = vec![vec![vec![0.0; 3]; 2]; 3];
    for row in transition.iter_mut().take(2) {
        for (a, risk) in [(0, 0.02..0.15), (1, 0.3..0.6)] {
            let to_unsafe: f64 = rng.random_range(risk);
            let to_zero = (1.0 - to_unsafe) * rng.random::<f64>();
            row[a] = vec![to_zero, 1.0 - to_unsafe - to_zero, to_unsafe];
        }
    }
    transition[2] = vec![vec![0.0, 0.0, 1.0]; 2];
    let mdp = FiniteMdp::new(transition, &[0, 1], 0, 3).expect("fixture is valid");
    let policy = TabularSoftmaxPolicy::random(rng.random(), 3, 2, 1.0);
    (mdp, policy)
}
