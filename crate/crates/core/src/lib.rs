//! Policy-gradient training under probabilistic safety constraints.
//!
//! The crate provides:
//!
//! * [`navenv`]: a 2-D obstacle navigation task with single-integrator dynamics.
//! * [`policy`]: a Gaussian policy whose mean is a linear combination of RBF features.
//! * [`gradients`]: Monte-Carlo estimators for the gradient of the probability of
//!   staying safe along a whole episode, and for the usual value gradient.
//! * [`trainer`]: fixed-penalty stochastic ascent, evaluation and λ sweeps.
//! * [`oracle`]: exact enumeration over tabular MDPs used to certify the estimators.
//! * [`verify`]: the gradient check suite built on top of [`oracle`].

pub mod error;
pub mod gradients;
pub mod navenv;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use gradients::{
    batch_average, batch_std_error, constraint_grad_estimate, safety_products, value_grad_estimate,
    value_grad_estimate_with_baseline, GradientEstimate, ScoreFunction,
};
pub use navenv::{NavWorld, Obstacle, Trajectory, Vec2, WorldParams};
pub use oracle::{FiniteMdp, TabularSoftmaxPolicy};
pub use policy::{Lattice, PolicyHyper, PolicyParams};
pub use rng::{EpisodeStreams, StreamDomain};
pub use trainer::{
    apply_update, batch_gradients, evaluate, lambda_sweep, lambda_sweep_with, regularized_update, train, train_with,
    CheckpointRow, EvalReport, Progress, RunConfig, SweepRow, TrainFailure, TrainHistory, TrainSettings,
};
