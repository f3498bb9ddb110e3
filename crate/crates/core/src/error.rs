use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid world: {0}")]
    InvalidWorld(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid finite MDP: {0}")]
    InvalidMdp(String),

    /// A state or action component became NaN or infinite.
    #[error("numerical divergence: non-finite {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },

    #[error("initial state is not in the safe set")]
    UnsafeStart,

    #[error("cannot average an empty batch")]
    EmptyBatch,

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("non-finite gradient estimate from episode {episode}")]
    NonFiniteGradient { episode: u64 },

    #[error("enumeration would visit {paths} paths (limit {limit})")]
    EnumerationTooLarge { paths: u128, limit: u128 },

    #[error("objective is not finite at coordinate {index}")]
    NonFiniteObjective { index: usize },
}
