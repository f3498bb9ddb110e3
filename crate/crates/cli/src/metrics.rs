//! CSV outputs.
//!
//! All files are comma separated with a header row and a newline after the
//! last row. `metrics.csv` holds only quantities determined by the config and
//! seed; elapsed time goes to the `timing.csv` sidecar so that repeated
//! sequential runs give byte-identical metrics.

use std::fs::File;
use std::path::Path;

use serde::Serialize;

use safepg::{CheckpointRow, EvalReport};

use crate::error::{CliError, CliResult};

pub const METRICS_HEADER: &str =
    "run_id,episode,lambda,step_size,avg_cumulative_reward,safety_probability,constraint_grad_norm,value_grad_norm";
pub const TIMING_HEADER: &str = "run_id,episode,wall_clock_secs";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow<'a> {
    pub run_id: &'a str,
    pub episode: u64,
    pub lambda: f64,
    pub step_size: f64,
    pub avg_cumulative_reward: f64,
    pub safety_probability: f64,
    pub constraint_grad_norm: f64,
    pub value_grad_norm: f64,
}

#[derive(Serialize)]
struct TimingRow<'a> {
    run_id: &'a str,
    episode: u64,
    wall_clock_secs: f64,
}

pub fn run_id(seed: u64, lambda: f64) -> String {
    format!("seed{seed}-lambda{lambda}")
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<File>> {
    csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| CliError::runtime(format!("cannot create {}", path.display()), e))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::runtime(format!("cannot write {}", path.display()), e)
}

/// Appends one metrics row and one timing row per history entry, flushing each.
pub struct MetricsSink {
    run_id: String,
    lambda: f64,
    step_size: f64,
    metrics: csv::Writer<File>,
    timing: csv::Writer<File>,
    metrics_path: std::path::PathBuf,
}

impl MetricsSink {
    pub fn create(dir: &Path, run_id: String, lambda: f64, step_size: f64) -> CliResult<Self> {
        let metrics_path = dir.join("metrics.csv");
        let timing_path = dir.join("timing.csv");
        let mut metrics = csv_writer(&metrics_path)?;
        let mut timing = csv_writer(&timing_path)?;
        metrics.write_record(METRICS_HEADER.split(',')).map_err(csv_err(&metrics_path))?;
        timing.write_record(TIMING_HEADER.split(',')).map_err(csv_err(&timing_path))?;
        let mut sink = MetricsSink { run_id, lambda, step_size, metrics, timing, metrics_path };
        sink.flush()?;
        Ok(sink)
    }

    pub fn push(&mut self, row: &CheckpointRow) -> CliResult<()> {
        let m = MetricsRow {
            run_id: &self.run_id,
            episode: row.episode,
            lambda: self.lambda,
            step_size: self.step_size,
            avg_cumulative_reward: row.avg_return,
            safety_probability: row.safety_probability,
            constraint_grad_norm: row.constraint_grad_norm,
            value_grad_norm: row.value_grad_norm,
        };
        let t = TimingRow { run_id: &self.run_id, episode: row.episode, wall_clock_secs: row.wall_clock_secs };
        let path = self.metrics_path.clone();
        self.metrics.serialize(m).map_err(csv_err(&path))?;
        self.timing.serialize(t).map_err(csv_err(&path))?;
        self.flush()
    }

    fn flush(&mut self) -> CliResult<()> {
        let err = |e| CliError::runtime(format!("cannot write {}", self.metrics_path.display()), e);
        self.metrics.flush().map_err(err)?;
        self.timing.flush().map_err(|e| CliError::runtime("cannot write timing.csv", e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub episodes: usize,
    pub seed: u64,
    pub safety_probability: f64,
    pub safety_std_error: f64,
    pub avg_cumulative_reward: f64,
    pub reward_std_error: f64,
    pub mean_final_distance: f64,
}

impl EvalRow {
    pub fn new(report: &EvalReport, seed: u64) -> Self {
        EvalRow {
            episodes: report.episodes,
            seed,
            safety_probability: report.safety_probability,
            safety_std_error: report.safety_std_error,
            avg_cumulative_reward: report.avg_cumulative_reward,
            reward_std_error: report.reward_std_error,
            mean_final_distance: report.mean_final_distance,
        }
    }
}

/// One line of a sweep summary; report columns are empty when the run failed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub lambda: f64,
    pub status: &'static str,
    pub safety_probability: Option<f64>,
    pub safety_std_error: Option<f64>,
    pub avg_cumulative_reward: Option<f64>,
    pub reward_std_error: Option<f64>,
    pub mean_final_distance: Option<f64>,
    pub error: String,
}

impl SummaryRow {
    pub fn new(lambda: f64, outcome: &Result<EvalReport, String>) -> Self {
        match outcome {
            Ok(r) => SummaryRow {
                lambda,
                status: "ok",
                safety_probability: Some(r.safety_probability),
                safety_std_error: Some(r.safety_std_error),
                avg_cumulative_reward: Some(r.avg_cumulative_reward),
                reward_std_error: Some(r.reward_std_error),
                mean_final_distance: Some(r.mean_final_distance),
                error: String::new(),
            },
            Err(e) => SummaryRow {
                lambda,
                status: "failed",
                safety_probability: None,
                safety_std_error: None,
                avg_cumulative_reward: None,
                reward_std_error: None,
                mean_final_distance: None,
                error: e.clone(),
            },
        }
    }
}

/// Writes a whole table at once, creating the file only after serialization succeeds.
pub fn write_table<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::runtime(format!("cannot write {}", path.display()), e))?;
    crate::checkpoint::write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(episode: u64, secs: f64) -> CheckpointRow {
        CheckpointRow {
            episode,
            avg_return: -150.25,
            safety_probability: 0.5,
            constraint_grad_norm: 0.125,
            value_grad_norm: 3.0,
            wall_clock_secs: secs,
        }
    }

    #[test]
    fn metrics_exclude_timing() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for (dir, secs) in [(&a, 1.0), (&b, 2.5)] {
            let mut sink = MetricsSink::create(dir.path(), run_id(3, 6.0), 6.0, 0.002).unwrap();
            sink.push(&row(1000, secs)).unwrap();
            sink.push(&row(2000, secs * 2.0)).unwrap();
        }
        let ma = std::fs::read_to_string(a.path().join("metrics.csv")).unwrap();
        let mb = std::fs::read_to_string(b.path().join("metrics.csv")).unwrap();
        assert_eq!(ma, mb);
        let lines: Vec<&str> = ma.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines[1], "seed3-lambda6,1000,6.0,0.002,-150.25,0.5,0.125,3.0");
        assert_eq!(lines.len(), 3);
        assert!(ma.ends_with('\n'));
        let ta = std::fs::read_to_string(a.path().join("timing.csv")).unwrap();
        assert_eq!(ta.lines().next().unwrap(), TIMING_HEADER);
        assert_ne!(ta, std::fs::read_to_string(b.path().join("timing.csv")).unwrap());
    }

    #[test]
    fn rows_are_visible_before_the_sink_drops() {
        let dir = tempfile::tempdir().unwrap();
        let mut sink = MetricsSink::create(dir.path(), "r".into(), 1.0, 0.1).unwrap();
        sink.push(&row(5, 0.0)).unwrap();
        let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn failed_summary_rows_leave_blanks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("summary.csv");
        write_table(&path, &[SummaryRow::new(0.5, &Err("diverged".into()))]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "0.5,failed,,,,,,diverged");
    }
}
