//! Repeated suite runs and their summary statistics.

use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use crate::formats::SuiteTask;
use crate::{run_planner, PlanRun};

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub task: String,
    pub run: usize,
    pub feasible: bool,
    pub wp_count: usize,
    pub rrt_s: f64,
    pub cp_s: f64,
    pub komo_s: f64,
    pub restarts: usize,
}

pub struct BenchRun {
    pub row: BenchRow,
    pub seed: u64,
    pub run: PlanRun,
}

/// Seed of run `run`; runs of different tasks share seeds.
pub fn derived_seed(base: u64, run: usize) -> u64 {
    base.wrapping_add(run as u64)
}

/// Runs every task `runs` times, in task then run order. `progress` is
/// called after each run.
pub fn run_suite(
    tasks: &[SuiteTask],
    runs: usize,
    base_seed: u64,
    mut progress: impl FnMut(&BenchRun),
) -> anyhow::Result<Vec<BenchRun>> {
    let mut out = Vec::with_capacity(tasks.len() * runs);
    for t in tasks {
        for run in 0..runs {
            let seed = derived_seed(base_seed, run);
            let result = run_planner(&t.scene, &t.task, seed, true)?;
            let m = &result.report.metrics;
            let row = BenchRow {
                task: t.name.clone(),
                run,
                feasible: result.report.feasible,
                wp_count: m.wp_count,
                rrt_s: m.rrt_seconds,
                cp_s: m.cp_seconds,
                komo_s: m.komo_seconds,
                restarts: m.restarts,
            };
            let r = BenchRun { row, seed, run: result };
            progress(&r);
            out.push(r);
        }
    }
    Ok(out)
}

pub fn write_csv(rows: &[BenchRow], out: impl Write) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Sample mean and standard deviation; the deviation is 0 for one value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Per-task statistics over all runs of that task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSummary {
    pub task: String,
    pub runs: usize,
    pub solved: usize,
    pub wp_count: (f64, f64),
    pub rrt_s: (f64, f64),
    pub cp_s: (f64, f64),
    pub komo_s: (f64, f64),
}

/// Summaries in order of first appearance.
pub fn summarize(rows: &[BenchRow]) -> Vec<TaskSummary> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.task.as_str()) {
            names.push(&r.task);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let rs: Vec<&BenchRow> = rows.iter().filter(|r| r.task == name).collect();
            let col = |f: fn(&BenchRow) -> f64| mean_std(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            TaskSummary {
                task: name.to_string(),
                runs: rs.len(),
                solved: rs.iter().filter(|r| r.feasible).count(),
                wp_count: col(|r| r.wp_count as f64),
                rrt_s: col(|r| r.rrt_s),
                cp_s: col(|r| r.cp_s),
                komo_s: col(|r| r.komo_s),
            }
        })
        .collect()
}

pub fn summary_table(rows: &[BenchRow]) -> String {
    let mut s = format!(
        "{:<20} {:>7} {:>16} {:>18} {:>18} {:>18}\n",
        "task", "solved", "wp_count", "rrt_s", "cp_s", "komo_s"
    );
    for t in summarize(rows) {
        let pm = |(m, sd): (f64, f64), p: usize| format!("{m:.p$} ± {sd:.p$}");
        let _ = writeln!(
            s,
            "{:<20} {:>7} {:>16} {:>18} {:>18} {:>18}",
            t.task,
            format!("{}/{}", t.solved, t.runs),
            pm(t.wp_count, 1),
            pm(t.rrt_s, 3),
            pm(t.cp_s, 3),
            pm(t.komo_s, 3)
        );
    }
    s
}
