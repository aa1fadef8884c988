//! `psvma`: dataset generation, training, evaluation and diagnostics.

mod commands;
mod config;
mod exit;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use psvma_core::evaluator::Averaging;

#[derive(Parser, Debug)]
#[command(name = "psvma", version, about = "Semantic-visual mutual adaption for generalized zero-shot learning")]
pub struct Cli {
    /// Replace a non-empty output directory instead of refusing.
    #[arg(long, global = true)]
    pub force: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic GZSL dataset.
    GenData(GenDataArgs),
    /// Train a model and write checkpoints plus metrics.csv.
    Train(TrainArgs),
    /// Evaluate a checkpoint at one calibration value; writes report.json.
    Eval(EvalArgs),
    /// Evaluate a checkpoint over a range of calibration values; writes sweep.csv.
    SweepGamma(SweepArgs),
    /// Compare tape gradients with finite differences; writes gradcheck.json.
    Gradcheck(GradcheckArgs),
    /// Write every affinity matrix of one sample as CSV.
    ExportAttn(ExportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    CubShape,
    SunShape,
    Awa2Shape,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AveragingArg {
    PerClass,
    PerSample,
}

impl From<AveragingArg> for Averaging {
    fn from(a: AveragingArg) -> Self {
        match a {
            AveragingArg::PerClass => Averaging::PerClass,
            AveragingArg::PerSample => Averaging::PerSample,
        }
    }
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Class and attribute counts of a benchmark, on top of the config.
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory (overrides `data_path`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda_sem: Option<f64>,
    #[arg(long)]
    pub lambda_deb: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub gamma: f64,
    #[arg(long, value_enum, default_value = "per-class")]
    pub averaging: AveragingArg,
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub from: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub to: f64,
    #[arg(long)]
    pub steps: usize,
    #[arg(long, value_enum, default_value = "per-class")]
    pub averaging: AveragingArg,
    #[arg(long, default_value = "sweep")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Probe every scalar instead of a few per parameter.
    #[arg(long)]
    pub full: bool,
    /// Finite-difference step.
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long, default_value = "gradcheck")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Dataset sample index.
    #[arg(long)]
    pub sample: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { exit::SUCCESS });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::from(exit::SUCCESS),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
