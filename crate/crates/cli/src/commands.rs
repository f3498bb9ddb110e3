//! Subcommand implementations.
//!
//! Inputs are read and validated before anything is created, so a bad config
//! or checkpoint leaves the output location untouched.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use safepg::verify::{run_all, CheckOptions, CheckOutcome};
use safepg::{
    evaluate, lambda_sweep_with, train_with, EpisodeStreams, EvalReport, NavWorld, PolicyParams, RunConfig,
    StreamDomain, SweepRow, TrainHistory, WorldParams,
};

use crate::checkpoint::{write_atomic, Checkpoint};
use crate::config::{load_config, parse_config, render_config};
use crate::error::{CliError, CliResult};
use crate::metrics::{run_id, write_table, EvalRow, MetricsSink, SummaryRow};

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub episodes: Option<u64>,
    pub cadence: Option<u64>,
    pub parallel: bool,
}

pub fn resolve_config(path: Option<&Path>, overrides: &Overrides) -> CliResult<RunConfig> {
    let mut config = match path {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    let t = &mut config.train;
    if let Some(s) = overrides.seed {
        t.seed = s;
    }
    if let Some(e) = overrides.episodes {
        t.episodes = e;
    }
    if let Some(c) = overrides.cadence {
        t.cadence = c;
    }
    t.parallel |= overrides.parallel;
    config.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(config)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("cannot create {}", dir.display()), e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub overrides: Overrides,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub config: RunConfig,
    pub params: PolicyParams,
    pub history: TrainHistory,
    pub final_checkpoint: PathBuf,
}

/// Trains and writes `config.toml`, `metrics.csv`, `timing.csv`,
/// `checkpoints/episode-NNNNNNNN.ckpt` at every history row, and `final.ckpt`.
pub fn cmd_train(opts: &TrainOptions) -> CliResult<TrainOutcome> {
    let config = resolve_config(opts.config.as_deref(), &opts.overrides)?;
    let echo = render_config(&config)?;
    parse_config(&echo, "resolved config")?;
    create_dir(&opts.out)?;
    write_atomic(&opts.out.join("config.toml"), echo.as_bytes())?;
    let (params, history) = train_into(&config, &opts.out)?;
    Ok(TrainOutcome { config, params, history, final_checkpoint: opts.out.join("final.ckpt") })
}

fn train_into(config: &RunConfig, dir: &Path) -> CliResult<(PolicyParams, TrainHistory)> {
    let t = &config.train;
    let ckpt_dir = dir.join("checkpoints");
    create_dir(&ckpt_dir)?;
    let mut sink = MetricsSink::create(dir, run_id(t.seed, t.lambda), t.lambda, t.step_size)?;
    let mut io_error = None;
    let result = train_with(config, |p| {
        let write = sink.push(p.row).and_then(|_| {
            let path = ckpt_dir.join(format!("episode-{:08}.ckpt", p.next_episode));
            Checkpoint::from_params(p.params, &config.policy, &config.world, t.seed, p.next_episode).save(&path)
        });
        write.map_err(|e| {
            let msg = e.to_string();
            io_error = Some(e);
            safepg::Error::InvalidConfig(msg)
        })
    });
    match result {
        Ok((params, history)) => {
            Checkpoint::from_params(&params, &config.policy, &config.world, t.seed, t.episodes)
                .save(&dir.join("final.ckpt"))?;
            Ok((params, history))
        }
        Err(failure) => Err(io_error.unwrap_or_else(|| {
            CliError::Runtime(format!(
                "training failed at episode {}: {}; last checkpoint kept in {}",
                failure.episode,
                failure.error,
                ckpt_dir.display()
            ))
        })),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub checkpoint: PathBuf,
    pub episodes: usize,
    pub seed: u64,
    /// Directory for `eval.csv`; defaults to the checkpoint's directory.
    pub out: Option<PathBuf>,
}

pub fn cmd_eval(opts: &EvalOptions) -> CliResult<EvalReport> {
    if opts.episodes == 0 {
        return Err(CliError::Usage("--episodes must be at least 1".into()));
    }
    let ckpt = Checkpoint::load(&opts.checkpoint)?;
    let params = ckpt.to_params().map_err(|e| CliError::runtime(opts.checkpoint.display(), e))?;
    let world = NavWorld::new(ckpt.meta.world.clone()).map_err(|e| CliError::runtime(opts.checkpoint.display(), e))?;
    let report =
        evaluate(&params, &world, opts.episodes, opts.seed).map_err(|e| CliError::runtime("evaluation failed", e))?;
    let out = match &opts.out {
        Some(d) => d.clone(),
        None => opts.checkpoint.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    if !out.as_os_str().is_empty() {
        create_dir(&out)?;
    }
    write_table(&out.join("eval.csv"), &[EvalRow::new(&report, opts.seed)])?;
    Ok(report)
}

pub fn format_report(r: &EvalReport) -> String {
    format!(
        "episodes {}\nsafety_probability {:.4} (se {:.4})\navg_cumulative_reward {:.4} (se {:.4})\nmean_final_distance {:.4}",
        r.episodes, r.safety_probability, r.safety_std_error, r.avg_cumulative_reward, r.reward_std_error, r.mean_final_distance
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOptions {
    pub config: Option<PathBuf>,
    pub lambdas: Vec<f64>,
    pub out: PathBuf,
    pub overrides: Overrides,
}

pub fn lambda_dir(out: &Path, lambda: f64) -> PathBuf {
    out.join(format!("lambda-{lambda}"))
}

/// Runs train + eval per λ in `lambda-<λ>/` and writes `summary.csv` sorted by λ.
pub fn cmd_sweep(opts: &SweepOptions) -> CliResult<Vec<SweepRow>> {
    if opts.lambdas.is_empty() {
        return Err(CliError::Usage("--lambdas needs at least one value".into()));
    }
    if let Some(bad) = opts.lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(CliError::Usage(format!("lambda {bad} is not a nonnegative number")));
    }
    let base = resolve_config(opts.config.as_deref(), &opts.overrides)?;
    for &l in &opts.lambdas {
        render_config(&base.with_lambda(l))?;
    }
    create_dir(&opts.out)?;
    let rows = lambda_sweep_with(&base, &opts.lambdas, |config| {
        let dir = lambda_dir(&opts.out, config.train.lambda);
        let run = || -> CliResult<EvalReport> {
            create_dir(&dir)?;
            write_atomic(&dir.join("config.toml"), render_config(config)?.as_bytes())?;
            let (params, _) = train_into(config, &dir)?;
            let world = NavWorld::new(config.world.clone()).map_err(|e| CliError::runtime("world", e))?;
            let report = evaluate(&params, &world, config.train.eval_episodes, config.train.seed)
                .map_err(|e| CliError::runtime("evaluation failed", e))?;
            write_table(&dir.join("eval.csv"), &[EvalRow::new(&report, config.train.seed)])?;
            Ok(report)
        };
        run().map_err(|e| e.to_string())
    })
    .map_err(|e| CliError::Usage(e.to_string()))?;
    let summary: Vec<SummaryRow> = rows.iter().map(|r| SummaryRow::new(r.lambda, &r.outcome)).collect();
    write_table(&opts.out.join("summary.csv"), &summary)?;
    if rows.iter().all(|r| r.outcome.is_err()) {
        return Err(CliError::Runtime("every sweep run failed; see summary.csv".into()));
    }
    Ok(rows)
}

/// Runs the oracle suite and fails with the offending instance seeds.
pub fn cmd_check_gradients(opts: &CheckOptions) -> CliResult<Vec<CheckOutcome>> {
    let outcomes = run_all(opts);
    let failed: Vec<String> = outcomes
        .iter()
        .filter(|o| !o.passed())
        .map(|o| match o.failing_seed {
            Some(s) => format!("{} (instance seed {s})", o.name),
            None => o.name.to_string(),
        })
        .collect();
    if failed.is_empty() {
        Ok(outcomes)
    } else {
        Err(CliError::Oracle(format!("{}\n{}", failed.join(", "), format_checks(&outcomes))))
    }
}

pub fn format_checks(outcomes: &[CheckOutcome]) -> String {
    let mut s = format!(
        "{:<20} {:>9} {:<24} {:>12} {:>10} {:>6} {:>8}  {}\n",
        "check", "instances", "metric", "max_error", "tolerance", "status", "secs", "seed"
    );
    for o in outcomes {
        s.push_str(&format!(
            "{:<20} {:>9} {:<24} {:>12.3e} {:>10.1e} {:>6} {:>8.2}  {}\n",
            o.name,
            o.instances,
            o.metric,
            o.max_error,
            o.tolerance,
            if o.passed() { "pass" } else { "FAIL" },
            o.elapsed.as_secs_f64(),
            o.failing_seed.map(|s| s.to_string()).unwrap_or_else(|| "-".into()),
        ));
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoOptions {
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub seed: u64,
}

#[derive(Serialize)]
struct GeometryRow {
    kind: &'static str,
    x: f64,
    y: f64,
    radius: Option<f64>,
}

#[derive(Serialize)]
struct TrajectoryRow {
    t: usize,
    x: f64,
    y: f64,
    safe: u8,
}

fn geometry_rows(w: &WorldParams) -> Vec<GeometryRow> {
    let point = |kind, p: [f64; 2]| GeometryRow { kind, x: p[0], y: p[1], radius: None };
    let mut rows = vec![
        point("bounds_lo", w.bounds_lo),
        point("bounds_hi", w.bounds_hi),
        point("start", w.start),
        point("goal", w.goal),
    ];
    rows.extend(w.obstacles.iter().map(|o| GeometryRow {
        kind: "obstacle",
        x: o.center[0],
        y: o.center[1],
        radius: Some(o.radius),
    }));
    rows
}

/// Writes `geometry.csv`, and with a checkpoint also `trajectory.csv` for one sampled episode.
pub fn cmd_demo_world(opts: &DemoOptions) -> CliResult<Vec<PathBuf>> {
    let ckpt = opts.checkpoint.as_deref().map(Checkpoint::load).transpose()?;
    let world = match (&ckpt, &opts.config) {
        (Some(c), _) => c.meta.world.clone(),
        (None, Some(p)) => load_config(p)?.world,
        (None, None) => WorldParams::default(),
    };
    let nav = NavWorld::new(world.clone()).map_err(|e| CliError::Config(e.to_string()))?;
    let trajectory = match &ckpt {
        Some(c) => {
            let params = c.to_params().map_err(|e| CliError::runtime("checkpoint", e))?;
            let mut rng = EpisodeStreams::new(opts.seed, StreamDomain::Demo).episode(0);
            let traj = nav.rollout(&params, &mut rng).map_err(|e| CliError::runtime("rollout failed", e))?;
            let rows: Vec<TrajectoryRow> = traj
                .states
                .iter()
                .zip(&traj.safe_flags)
                .enumerate()
                .map(|(t, (s, &safe))| TrajectoryRow { t, x: s[0], y: s[1], safe: safe as u8 })
                .collect();
            Some(rows)
        }
        None => None,
    };
    create_dir(&opts.out)?;
    let geometry = opts.out.join("geometry.csv");
    write_table(&geometry, &geometry_rows(&world))?;
    let mut written = vec![geometry];
    if let Some(rows) = trajectory {
        let path = opts.out.join("trajectory.csv");
        write_table(&path, &rows)?;
        written.push(path);
    }
    Ok(written)
}
