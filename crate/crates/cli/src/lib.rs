//! Command-line layer for `safepg`.
//!
//! - [`config`]: TOML run configs with line-level diagnostics.
//! - [`checkpoint`]: versioned binary policy snapshots.
//! - [`metrics`]: CSV sinks for training, evaluation, and sweep summaries.
//! - [`commands`]: the `train`, `eval`, `sweep`, `check-gradients`, and `demo-world` subcommands.
//! - [`app`]: argument parsing and exit codes.

pub mod app;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod metrics;

pub use error::{CliError, CliResult};
