//! `dslift`: build mocap indices, lift 2D observations to 3D, generate
//! synthetic scenes and run evaluation sweeps.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 estimation
//! failure. `DSLIFT_THREADS` caps the worker pool.

mod commands;
mod fail;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fail::Failure;

#[derive(Parser)]
#[command(name = "dslift", version, about = "3D human pose lifting from 2D joint evidence")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    /// Worker threads (default: all cores).
    #[arg(long, env = "DSLIFT_THREADS", global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a pose file and build a retrieval index.
    BuildDb(BuildDbArgs),
    /// Lift one observation (unary maps or a 2D pose) to 3D.
    Estimate(EstimateArgs),
    /// Run a synthetic benchmark, or score a result against ground truth.
    Eval(EvalArgs),
    /// Write a synthetic scene to a directory.
    Synth(SynthArgs),
    /// Aggregate existing report CSVs.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct BuildDbArgs {
    /// JSON-lines or CSV pose file.
    #[arg(long)]
    pub poses: PathBuf,
    /// Skeleton definition (default: the built-in 14-joint skeleton).
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Drop poses closer than this (mean per-joint mm) to a kept pose.
    #[arg(long, default_value_t = dslift_core::skeleton::DEFAULT_DEDUP_MM)]
    pub dedup_mm: f64,
}

#[derive(Args)]
pub struct ParamArgs {
    /// Parameters file (`key = value` lines).
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Override one parameter, e.g. `--set K_w=32` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// Unary score maps (`DSUM` binary).
    #[arg(long, conflicts_with = "pose2d", required_unless_present = "pose2d")]
    pub unaries: Option<PathBuf>,
    /// 2D pose JSON `{"joints_px": [[x, y], ...]}`; unary maps are synthesized around it.
    #[arg(long)]
    pub pose2d: Option<PathBuf>,
    /// Intrinsics file (`fx`, `fy`, `cx`, `cy`).
    #[arg(long)]
    pub intrinsics: PathBuf,
    /// Annotated 2D poses (JSON lines of `{"joints_px": ...}`) for the
    /// initial pictorial structure. Default: index poses rendered at the
    /// scale of the unary peaks.
    #[arg(long)]
    pub psm_training: Option<PathBuf>,
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Scenario suite JSON.
    #[arg(long, conflicts_with_all = ["result", "ground_truth"])]
    pub scenarios: Option<PathBuf>,
    /// Parameter sweep `key=v1,v2` (repeatable; cartesian product).
    #[arg(long, requires = "scenarios")]
    pub sweep: Vec<String>,
    /// Override the suite's first seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Lifting result JSON to score.
    #[arg(long, requires = "ground_truth")]
    pub result: Option<PathBuf>,
    /// Ground-truth JSON (`pose_3d_mm`, optional `pose_2d_px`).
    #[arg(long, requires = "result")]
    pub ground_truth: Option<PathBuf>,
    /// Also fit a uniform scale when aligning (scoring only).
    #[arg(long)]
    pub allow_scale: bool,
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory (benchmark) or JSON file (scoring).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Scenario JSON (default: the built-in scenario).
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Report CSVs written by `eval`.
    #[arg(long, required = true, num_args = 1..)]
    pub csv: Vec<PathBuf>,
    /// Aggregate JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional plot-ready TSV.
    #[arg(long)]
    pub curves: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        (false, 2) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool: {e}");
        }
    }
    let result: Result<(), Failure> = match cli.command {
        Command::BuildDb(a) => commands::build_db(a),
        Command::Estimate(a) => commands::estimate(a),
        Command::Eval(a) => commands::eval(a),
        Command::Synth(a) => commands::synth(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
