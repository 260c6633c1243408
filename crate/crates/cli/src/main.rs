//! `smmt`: generate data, train and evaluate models, run ablations and
//! attention benchmarks.
//!
//! Exit codes: 0 on success, 1 for invalid arguments, configuration or
//! input files, 2 for failures while running.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "smmt", version, about = "Cluster-sparse multimodal transformer toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Seed for data, model, masks and batch order. Overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `key = value` config file; keys are model, training and data fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for reports, models and datasets.
    #[arg(long, global = true, default_value = "smmt-out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset file.
    GenData,
    /// Train a model and save it with its loss history.
    Train(TrainArgs),
    /// Score a saved model on a dataset.
    Eval(EvalArgs),
    /// Full / no-sparse / no-mask / neither grid over training fractions.
    Ablate(AblateArgs),
    /// Accuracy of the full model across mask ratios.
    MaskSweep(MaskSweepArgs),
    /// Time dense against cluster-sparse attention.
    Bench(BenchArgs),
    /// Finite-difference check of every gradient in a small model.
    Gradcheck(GradcheckArgs),
    /// Convert energy to CO2 emissions.
    Co2(Co2Args),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset file; generated from the config when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Train on fold 0's training split and report validation accuracy
    /// after every epoch.
    #[arg(long)]
    pub holdout: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6,0.8,1.0")]
    pub fractions: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct MaskSweepArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")]
    pub ratios: Vec<f64>,
    /// Fraction of the training split used for every ratio.
    #[arg(long, default_value_t = 0.4)]
    pub fraction: f64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "256,512,1024,2048,4096")]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    pub d_k: usize,
    #[arg(long, default_value_t = 1)]
    pub heads: usize,
    /// dense, sparse or both.
    #[arg(long, default_value = "both")]
    pub mode: String,
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct Co2Args {
    /// Energy consumed in kWh.
    #[arg(long, conflicts_with = "flops", allow_negative_numbers = true)]
    pub energy_kwh: Option<f64>,
    /// Estimate energy from an operation count instead.
    #[arg(long, requires = "joules_per_flop")]
    pub flops: Option<f64>,
    #[arg(long)]
    pub joules_per_flop: Option<f64>,
    /// Carbon intensity in kg CO2 per kWh.
    #[arg(long, default_value_t = smmt_core::harness::energy::TAIWAN_GRID_CI)]
    pub ci: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
