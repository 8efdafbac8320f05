//! Command implementations behind the `hmap` binary.

pub mod bench;
pub mod check;
pub mod formats;
pub mod svg;

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use hmap_core::planner::{plan, PlanReport};
use serde::Serialize;

use crate::check::{check_plan, violation_table, CheckTolerances};
use crate::formats::{LoadedScene, LoadedTask, MetricsFile, PlanFile, SceneFile, TaskFile};

/// Process exit codes.
pub mod exit {
    pub const FEASIBLE: i32 = 0;
    pub const INPUT: i32 = 1;
    pub const INFEASIBLE: i32 = 2;
}

/// A finished planner run together with its serialized plan.
pub struct PlanRun {
    pub report: PlanReport,
    pub plan: PlanFile,
    pub seconds: f64,
}

/// Plans a loaded task. `timings` embeds stage timings in the plan file.
pub fn run_planner(scene: &LoadedScene, task: &LoadedTask, seed: u64, timings: bool) -> anyhow::Result<PlanRun> {
    let mut config = task.config.clone();
    config.seed = seed;
    let start = Instant::now();
    let report = plan(&scene.scene, &scene.init, &task.task, &config).context("planner rejected the input")?;
    let seconds = start.elapsed().as_secs_f64();
    let plan = PlanFile::from_report(&report, &scene.scene, &task.task, config.tau, timings);
    Ok(PlanRun { report, plan, seconds })
}

#[derive(Debug, Clone)]
pub struct PlanArgs {
    pub scene: PathBuf,
    pub task: PathBuf,
    /// Overrides the task file's seed.
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub svg: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub timings: bool,
}

/// Run summary written by `--report`; unlike the plan file it carries
/// wall-clock timings.
#[derive(Debug, Serialize)]
struct RunReport<'a> {
    scene: &'a Path,
    task: &'a Path,
    seed: u64,
    feasible: bool,
    failure: Option<&'a str>,
    seconds: f64,
    steps: usize,
    contacts: usize,
    metrics: MetricsFile,
    grasp_calls: usize,
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// `hmap plan`. Returns the exit code; `Err` means an input or I/O error.
pub fn cmd_plan(args: &PlanArgs) -> anyhow::Result<i32> {
    let scene = SceneFile::load(&args.scene)?;
    let task = TaskFile::load(&args.task)?;
    let seed = args.seed.unwrap_or(task.config.seed);
    let run = run_planner(&scene, &task, seed, args.timings)?;
    write_file(&args.out, &run.plan.to_json())?;
    if let Some(dir) = &args.svg {
        let files = svg::render(&run.plan, &scene.scene, dir)?;
        log::info!("wrote {} SVG files to {}", files.len(), dir.display());
    }
    if let Some(path) = &args.report {
        let metrics = PlanFile::from_report(&run.report, &scene.scene, &task.task, task.config.tau, true).metrics;
        let report = RunReport {
            scene: &args.scene,
            task: &args.task,
            seed,
            feasible: run.report.feasible,
            failure: run.report.failure.as_deref(),
            seconds: run.seconds,
            steps: run.report.path.len(),
            contacts: run.report.contacts.len(),
            metrics,
            grasp_calls: run.report.metrics.grasp_calls,
        };
        write_file(path, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    let m = &run.report.metrics;
    if run.report.feasible {
        println!(
            "feasible: {} steps, {} contacts, {} waypoints, {} restarts ({:.2} s)",
            run.report.path.len(),
            run.report.contacts.len(),
            m.wp_count,
            m.restarts,
            run.seconds
        );
        Ok(exit::FEASIBLE)
    } else {
        eprintln!(
            "infeasible: {} ({:.2} s)",
            run.report.failure.as_deref().unwrap_or("no plan found"),
            run.seconds
        );
        Ok(exit::INFEASIBLE)
    }
}

#[derive(Debug, Clone)]
pub struct ReplayArgs {
    pub plan: PathBuf,
    pub scene: PathBuf,
    pub check: bool,
    pub svg: Option<PathBuf>,
}

/// `hmap replay`. With `check`, exits 0 only if no violation is found.
pub fn cmd_replay(args: &ReplayArgs) -> anyhow::Result<i32> {
    let plan = PlanFile::load(&args.plan)?;
    let scene = SceneFile::load(&args.scene)?;
    // Frame ids are compared first so that a wrong scene is reported as a
    // mismatch rather than as a pile of violations.
    let violations = check_plan(&plan, &scene.scene, &CheckTolerances::default())?;
    if let Some(dir) = &args.svg {
        svg::render(&plan, &scene.scene, dir)?;
    }
    println!(
        "{} steps, {} switches, {} contacts, feasible flag {}",
        plan.steps.len(),
        plan.switches.len(),
        plan.contacts.len(),
        plan.feasible
    );
    if !args.check {
        return Ok(exit::FEASIBLE);
    }
    print!("{}", violation_table(&violations));
    Ok(if violations.is_empty() { exit::FEASIBLE } else { exit::INFEASIBLE })
}

#[derive(Debug, Clone)]
pub struct BenchArgs {
    pub suite: PathBuf,
    pub runs: usize,
    pub seed: u64,
    pub csv: PathBuf,
}

/// `hmap bench`. Exits 2 if any run was infeasible.
pub fn cmd_bench(args: &BenchArgs) -> anyhow::Result<i32> {
    let tasks = formats::SuiteFile::load(&args.suite)?;
    anyhow::ensure!(!tasks.is_empty(), "{}: suite lists no tasks", args.suite.display());
    anyhow::ensure!(args.runs > 0, "--runs must be at least 1");
    let runs = bench::run_suite(&tasks, args.runs, args.seed, |r| {
        log::info!("{} run {}: feasible {} in {:.2} s", r.row.task, r.row.run, r.row.feasible, r.run.seconds);
    })?;
    let rows: Vec<bench::BenchRow> = runs.into_iter().map(|r| r.row).collect();
    let mut out = Vec::new();
    bench::write_csv(&rows, &mut out)?;
    write_file(&args.csv, std::str::from_utf8(&out)?)?;
    print!("{}", bench::summary_table(&rows));
    Ok(if rows.iter().all(|r| r.feasible) { exit::FEASIBLE } else { exit::INFEASIBLE })
}
