use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hmap_cli::{cmd_bench, cmd_plan, cmd_replay, exit, BenchArgs, PlanArgs, ReplayArgs};

/// Planar sequential manipulation planner.
#[derive(Parser)]
#[command(name = "hmap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan one task and write the plan file.
    Plan {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        task: PathBuf,
        /// Overrides the seed in the task file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Directory for per-step SVG frames and an overview.
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Run summary with wall-clock stage timings.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Also embed the stage timings in the plan file, which makes it
        /// differ between runs.
        #[arg(long)]
        timings: bool,
        /// Debug logging unless HMAP_LOG says otherwise.
        #[arg(long, short)]
        verbose: bool,
    },
    /// Replay a plan against a scene, optionally re-checking it.
    Replay {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        check: bool,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Run every task of a suite several times and tabulate the metrics.
    Bench {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        csv: PathBuf,
    },
}

fn init_logging(verbose: bool) {
    let default = if verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HMAP_LOG", default))
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::INPUT as u8 } else { 0 });
        }
    };
    let verbose = matches!(cli.command, Command::Plan { verbose: true, .. });
    init_logging(verbose);
    let result = match cli.command {
        Command::Plan {
            scene,
            task,
            seed,
            out,
            svg,
            report,
            timings,
            verbose: _,
        } => cmd_plan(&PlanArgs {
            scene,
            task,
            seed,
            out,
            svg,
            report,
            timings,
        }),
        Command::Replay { plan, scene, check, svg } => cmd_replay(&ReplayArgs { plan, scene, check, svg }),
        Command::Bench { suite, runs, seed, csv } => cmd_bench(&BenchArgs { suite, runs, seed, csv }),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::INPUT as u8)
        }
    }
}
