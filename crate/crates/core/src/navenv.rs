//! Continuous 2-D navigation among circular obstacles.
//!
//! The state is a position in the plane and the action a velocity; positions
//! advance as `s' = s + a * dt` with no clipping. A state is safe when it lies
//! in the map box (edges included) and strictly outside every obstacle disc.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::PolicyParams;

pub type Vec2 = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Vec2,
    pub radius: f64,
}

/// Raw world description, as read from a config file.
///
/// `Default` is the five-obstacle map with start (1, 8.5) and goal (9, 1.5).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldParams {
    pub bounds_lo: Vec2,
    pub bounds_hi: Vec2,
    pub obstacles: Vec<Obstacle>,
    pub goal: Vec2,
    pub start: Vec2,
    pub dt: f64,
    pub horizon: usize,
}

impl Default for WorldParams {
    fn default() -> Self {
        let obstacle = |x, y, radius| Obstacle { center: [x, y], radius };
        Self {
            bounds_lo: [0.0, 0.0],
            bounds_hi: [10.0, 10.0],
            obstacles: vec![
                obstacle(7.0, 7.0, 2.0),
                obstacle(3.0, 7.0, 1.0),
                obstacle(1.5, 4.0, 0.5),
                obstacle(4.5, 3.0, 1.5),
                obstacle(8.0, 3.0, 0.75),
            ],
            goal: [9.0, 1.5],
            start: [1.0, 8.5],
            dt: 0.05,
            horizon: 20,
        }
    }
}

/// A validated world.
#[derive(Clone, Debug, PartialEq)]
pub struct NavWorld {
    params: WorldParams,
}

impl NavWorld {
    pub fn new(params: WorldParams) -> Result<Self> {
        let all_finite = |v: &Vec2| v.iter().all(|x| x.is_finite());
        if ![params.bounds_lo, params.bounds_hi, params.goal, params.start].iter().all(all_finite) {
            return Err(Error::InvalidWorld("coordinates must be finite".into()));
        }
        if params.bounds_lo[0] > params.bounds_hi[0] || params.bounds_lo[1] > params.bounds_hi[1] {
            return Err(Error::InvalidWorld("bounds_lo exceeds bounds_hi".into()));
        }
        for (i, o) in params.obstacles.iter().enumerate() {
            if !(o.radius > 0.0 && o.radius.is_finite()) || !all_finite(&o.center) {
                return Err(Error::InvalidWorld(format!("obstacle {i} needs a finite center and a positive radius")));
            }
        }
        if !(params.dt > 0.0 && params.dt.is_finite()) {
            return Err(Error::InvalidWorld("dt must be positive".into()));
        }
        if params.horizon == 0 {
            return Err(Error::InvalidWorld("horizon must be at least 1".into()));
        }
        let world = Self { params };
        if !world.is_safe(world.params.start) {
            return Err(Error::InvalidWorld("start state is not safe".into()));
        }
        Ok(world)
    }

    pub fn params(&self) -> &WorldParams {
        &self.params
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.params.obstacles
    }

    pub fn start(&self) -> Vec2 {
        self.params.start
    }

    pub fn goal(&self) -> Vec2 {
        self.params.goal
    }

    pub fn dt(&self) -> f64 {
        self.params.dt
    }

    pub fn horizon(&self) -> usize {
        self.params.horizon
    }

    pub fn in_bounds(&self, state: Vec2) -> bool {
        let (lo, hi) = (self.params.bounds_lo, self.params.bounds_hi);
        (0..2).all(|i| state[i] >= lo[i] && state[i] <= hi[i])
    }

    /// Obstacles are closed discs: a point on a circle is unsafe.
    pub fn is_safe(&self, state: Vec2) -> bool {
        self.in_bounds(state) && self.params.obstacles.iter().all(|o| sq_dist(state, o.center) > o.radius * o.radius)
    }

    pub fn step(&self, state: Vec2, action: Vec2) -> Result<Vec2> {
        if !state.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite { what: "state", step: 0 });
        }
        if !action.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite { what: "action", step: 0 });
        }
        let dt = self.params.dt;
        let next = [state[0] + action[0] * dt, state[1] + action[1] * dt];
        if !next.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite { what: "state", step: 0 });
        }
        Ok(next)
    }

    /// Negative squared distance to the goal.
    pub fn reward(&self, state: Vec2) -> f64 {
        -sq_dist(state, self.params.goal)
    }

    /// Simulates one full episode of `horizon` steps from the start state.
    ///
    /// Episodes run to the horizon even after the agent becomes unsafe.
    pub fn rollout<R: Rng + ?Sized>(&self, policy: &PolicyParams, rng: &mut R) -> Result<Trajectory> {
        let horizon = self.params.horizon;
        let mut states = Vec::with_capacity(horizon + 1);
        let mut actions = Vec::with_capacity(horizon);
        let mut features = vec![0.0; policy.num_kernels()];

        let mut state = self.params.start;
        states.push(state);
        for t in 0..horizon {
            policy.features_into(state, &mut features);
            let action = policy.sample_from_features(&features, rng);
            state = self.step(state, action).map_err(|e| match e {
                Error::NonFinite { what, .. } => Error::NonFinite { what, step: t },
                other => other,
            })?;
            actions.push(action);
            states.push(state);
        }
        let rewards = states.iter().map(|&s| self.reward(s)).collect();
        let safe_flags = states.iter().map(|&s| self.is_safe(s)).collect();
        Ok(Trajectory { states, actions, rewards, safe_flags })
    }
}

impl Default for NavWorld {
    fn default() -> Self {
        default_world()
    }
}

pub fn default_world() -> NavWorld {
    NavWorld::new(WorldParams::default()).expect("default world is valid")
}

pub(crate) fn sq_dist(a: Vec2, b: Vec2) -> f64 {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    dx * dx + dy * dy
}

/// One episode: `T + 1` states, `T` actions, `T + 1` rewards and safety flags.
///
/// Generic so the tabular oracle can reuse the same estimators with integer
/// states and actions.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<S = Vec2, A = Vec2> {
    pub states: Vec<S>,
    pub actions: Vec<A>,
    pub rewards: Vec<f64>,
    pub safe_flags: Vec<bool>,
}

impl<S, A> Trajectory<S, A> {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn is_consistent(&self) -> bool {
        let n = self.actions.len() + 1;
        self.states.len() == n && self.rewards.len() == n && self.safe_flags.len() == n
    }

    pub fn all_safe(&self) -> bool {
        self.safe_flags.iter().all(|&f| f)
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

impl Trajectory {
    pub fn final_state(&self) -> Vec2 {
        *self.states.last().expect("trajectory has at least one state")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{Lattice, PolicyHyper};
    use crate::rng::{EpisodeStreams, StreamDomain};

    fn world() -> NavWorld {
        default_world()
    }

    #[test]
    fn reference_geometry() {
        let w = world();
        assert_eq!(w.obstacles().len(), 5);
        assert_eq!(w.obstacles()[0], Obstacle { center: [7.0, 7.0], radius: 2.0 });
        let radii: Vec<f64> = w.obstacles().iter().map(|o| o.radius).collect();
        assert_eq!(radii, vec![2.0, 1.0, 0.5, 1.5, 0.75]);
        assert_eq!(w.dt(), 0.05);
        assert_eq!(w.goal(), [9.0, 1.5]);
        assert_eq!(w.start(), [1.0, 8.5]);
        assert_eq!(w.horizon(), 20);
    }

    #[test]
    fn safety_examples() {
        let w = world();
        assert!(!w.is_safe([7.0, 7.0]));
        assert!(w.is_safe([1.0, 8.5]));
        assert!(w.is_safe([0.0, 0.0]));
        assert!(!w.is_safe([10.1, 5.0]));
        assert!(w.is_safe([10.0, 10.0]));
        assert!(!w.is_safe([5.0, -1e-9]));
    }

    #[test]
    fn obstacle_boundary_is_unsafe() {
        let w = world();
        // (7, 9) lies exactly on the radius-2 circle around (7, 7).
        assert!(!w.is_safe([7.0, 9.0]));
        assert!(w.is_safe([7.0, 9.0 + 1e-9]));
    }

    #[test]
    fn step_examples() {
        let w = world();
        let s = w.step([1.0, 8.5], [2.0, -3.0]).unwrap();
        assert!((s[0] - 1.1).abs() < 1e-12 && (s[1] - 8.35).abs() < 1e-12);
        assert_eq!(w.step([0.0, 0.0], [0.0, 0.0]).unwrap(), [0.0, 0.0]);
        let s = w.step([9.0, 1.5], [20.0, 0.0]).unwrap();
        assert!((s[0] - 10.0).abs() < 1e-12 && s[1] == 1.5);
    }

    #[test]
    fn step_rejects_non_finite() {
        let w = world();
        assert!(matches!(w.step([0.0, 0.0], [f64::NAN, 0.0]), Err(Error::NonFinite { what: "action", .. })));
        assert!(w.step([f64::INFINITY, 0.0], [0.0, 0.0]).is_err());
        assert!(w.step([0.0, 0.0], [f64::MAX, 0.0]).is_ok());
    }

    #[test]
    fn reward_examples() {
        let w = world();
        assert_eq!(w.reward([9.0, 1.5]), 0.0);
        assert_eq!(w.reward([8.0, 1.5]), -1.0);
        assert_eq!(w.reward([1.0, 8.5]), -113.0);
    }

    #[test]
    fn construction_rejects_bad_worlds() {
        let bad_start = WorldParams { start: [7.0, 7.0], ..Default::default() };
        assert!(NavWorld::new(bad_start).is_err());
        let mut bad_radius = WorldParams::default();
        bad_radius.obstacles[2].radius = 0.0;
        assert!(NavWorld::new(bad_radius).is_err());
        assert!(NavWorld::new(WorldParams { horizon: 0, ..Default::default() }).is_err());
        assert!(NavWorld::new(WorldParams { dt: 0.0, ..Default::default() }).is_err());
    }

    #[test]
    fn rollout_shape_and_determinism() {
        let w = world();
        let policy = PolicyParams::from_hyper(&PolicyHyper::default()).unwrap();
        let streams = EpisodeStreams::new(11, StreamDomain::Train);
        let a = w.rollout(&policy, &mut streams.episode(0)).unwrap();
        let b = w.rollout(&policy, &mut streams.episode(0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.states.len(), 21);
        assert_eq!(a.actions.len(), 20);
        assert!(a.is_consistent());
        for (s, &f) in a.states.iter().zip(&a.safe_flags) {
            assert_eq!(w.is_safe(*s), f);
        }
        for t in 0..20 {
            let moved = sq_dist(a.states[t + 1], a.states[t]).sqrt();
            let speed = (a.actions[t][0].powi(2) + a.actions[t][1].powi(2)).sqrt();
            assert!(moved <= w.dt() * speed + 1e-12);
        }
    }

    #[test]
    fn zero_policy_stays_near_start() {
        let w = world();
        let hyper = PolicyHyper { lattice: Lattice::default(), ..Default::default() };
        let policy = PolicyParams::from_hyper(&hyper).unwrap();
        let traj = w.rollout(&policy, &mut EpisodeStreams::new(3, StreamDomain::Eval).episode(9)).unwrap();
        // 20 steps of N(0, 0.5) velocity over dt = 0.05: about 0.16 spread per axis.
        assert!(sq_dist(traj.final_state(), w.start()).sqrt() < 1.5);
    }
}
