//! Shared fixtures for the benchmarks.

use safepg::{EpisodeStreams, NavWorld, PolicyHyper, PolicyParams, StreamDomain, Trajectory};

/// Reference-lattice policy whose mean everywhere points at the goal with the
/// given speed, so rollouts cover the map the way a trained policy does.
pub fn goal_seeking_policy(speed: f64) -> PolicyParams {
    let world = NavWorld::default();
    let base = PolicyParams::from_hyper(&PolicyHyper::default()).expect("default policy");
    let norm: f64 = base.features([5.0, 5.0]).iter().sum();
    let dir = [world.goal()[0] - world.start()[0], world.goal()[1] - world.start()[1]];
    let len = dir[0].hypot(dir[1]);
    let c = [speed * dir[0] / len / norm, speed * dir[1] / len / norm];
    let flat: Vec<f64> = (0..base.num_kernels()).flat_map(|_| c).collect();
    base.with_flat_coefficients(&flat).expect("matching length")
}

/// The same policy on an explicit center list, which evaluates every kernel directly.
pub fn unstructured(policy: &PolicyParams) -> PolicyParams {
    PolicyParams::new(
        policy.centers().to_vec(),
        policy.bandwidth(),
        policy.coefficients().to_vec(),
        policy.covariance_diag(),
    )
    .expect("valid copy")
}

pub fn rollouts(policy: &PolicyParams, n: u64) -> Vec<Trajectory> {
    let world = NavWorld::default();
    let streams = EpisodeStreams::new(0, StreamDomain::Demo);
    (0..n).map(|i| world.rollout(policy, &mut streams.episode(i)).expect("rollout")).collect()
}
