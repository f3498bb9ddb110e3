//! Argument parsing and dispatch.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 runtime failure,
//! 3 gradient-check failure.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use safepg::verify::CheckOptions;

use crate::commands::{
    cmd_check_gradients, cmd_demo_world, cmd_eval, cmd_sweep, cmd_train, format_checks, format_report, DemoOptions,
    EvalOptions, Overrides, SweepOptions, TrainOptions,
};
use crate::error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "safepg", version, about = "Policy-gradient training under a probabilistic safety penalty")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a policy and write metrics, checkpoints and the resolved config.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Evaluate a checkpoint over independent episodes.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for eval.csv (default: the checkpoint's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate once per penalty weight.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        lambdas: Vec<f64>,
    },
    /// Run the exact-oracle and finite-difference gradient checks.
    CheckGradients {
        /// First fixture seed.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Monte-Carlo episodes for the sampling check.
        #[arg(long, default_value_t = 100_000)]
        episodes: u64,
        #[arg(long, hide = true, default_value_t = 0.0)]
        estimator_perturbation: f64,
    },
    /// Export world geometry and optionally one sampled trajectory as CSV.
    DemoWorld {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub episodes: Option<u64>,
    #[arg(long)]
    pub cadence: Option<u64>,
    /// Simulate each batch on worker threads.
    #[arg(long)]
    pub parallel: bool,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides { seed: self.seed, episodes: self.episodes, cadence: self.cadence, parallel: self.parallel }
    }
}

pub fn execute(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Train { run } => {
            let o = cmd_train(&TrainOptions {
                config: run.config.clone(),
                out: run.out.clone(),
                overrides: run.overrides(),
            })?;
            Ok(format!(
                "trained {} episodes, {} metric rows; final checkpoint {}",
                o.config.train.episodes,
                o.history.rows.len(),
                o.final_checkpoint.display()
            ))
        }
        Command::Eval { checkpoint, episodes, seed, out } => {
            let r = cmd_eval(&EvalOptions { checkpoint, episodes, seed, out })?;
            Ok(format_report(&r))
        }
        Command::Sweep { run, lambdas } => {
            let opts =
                SweepOptions { config: run.config.clone(), lambdas, out: run.out.clone(), overrides: run.overrides() };
            let rows = cmd_sweep(&opts)?;
            let mut s = String::from("lambda,status,safety_probability,avg_cumulative_reward");
            for r in rows {
                match r.outcome {
                    Ok(e) => s.push_str(&format!(
                        "\n{},ok,{:.4},{:.4}",
                        r.lambda, e.safety_probability, e.avg_cumulative_reward
                    )),
                    Err(e) => s.push_str(&format!("\n{},failed,{e}", r.lambda)),
                }
            }
            Ok(s)
        }
        Command::CheckGradients { seed, episodes, estimator_perturbation } => {
            let opts =
                CheckOptions { base_seed: seed, mc_episodes: episodes, estimator_perturbation, ..Default::default() };
            cmd_check_gradients(&opts).map(|o| format_checks(&o).trim_end().to_string())
        }
        Command::DemoWorld { out, checkpoint, config, seed } => {
            let files = cmd_demo_world(&DemoOptions { out, checkpoint, config, seed })?;
            Ok(files.iter().map(|f| format!("wrote {}", f.display())).collect::<Vec<_>>().join("\n"))
        }
    }
}

/// Parses `args`, runs the command, prints the result, and returns the exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { CliError::Usage(String::new()).exit_code() } else { 0 };
        }
    };
    match execute(cli) {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
