use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gwib::trainer::Variant;

#[derive(Debug, Parser)]
#[command(name = "gwib", version, about = "Treatment-effect estimation with Gromov-Wasserstein information regularization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model per seed and evaluate it.
    Train(TrainArgs),
    /// Solve a single transport problem from matrix CSV files.
    SolveOt(SolveOtArgs),
    /// Compare the regularizer variants over several seeds.
    Ablate(AblateArgs),
    /// Measure how much covariate geometry the codes lose.
    Diagnose(DiagnoseArgs),
    /// Write a synthetic cohort with known potential outcomes.
    GenSynth(GenSynthArgs),
}

/// Flags shared by the commands that train models.
#[derive(Clone, Debug, Args)]
pub struct RunArgs {
    /// Configuration file with `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Cohort CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "gwib-out")]
    pub out: PathBuf,
    /// Seed for the split and the training streams.
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Comma-separated seeds, one run each.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Regularization weight.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Weight of the structural term against the feature term.
    #[arg(long)]
    pub beta: Option<f64>,
}

#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Model variant, e.g. gwib, cfr_wass or tarnet.
    #[arg(long)]
    pub variant: Option<Variant>,
}

#[derive(Clone, Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Add an unregularized baseline row.
    #[arg(long)]
    pub with_tarnet: bool,
    /// Add a Wasserstein-regularized baseline row.
    #[arg(long)]
    pub with_cfr_wass: bool,
}

#[derive(Clone, Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Trained model to inspect.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Comma-separated regularization weights to train and inspect.
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Vec<f64>,
    /// Variant trained for the sweep.
    #[arg(long)]
    pub variant: Option<Variant>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OtProblem {
    /// Exact transport: COST.
    Emd,
    /// Gromov-Wasserstein: A B.
    Gw,
    /// Fused Gromov-Wasserstein: A B CROSS.
    Fgw,
    /// Joint covariate and latent alignment: DX0 DX1 DZ0 DZ1 DZ01.
    Fused,
}

impl OtProblem {
    pub fn name(self) -> &'static str {
        match self {
            OtProblem::Emd => "emd",
            OtProblem::Gw => "gw",
            OtProblem::Fgw => "fgw",
            OtProblem::Fused => "fused",
        }
    }
}

#[derive(Clone, Debug, Args)]
pub struct SolveOtArgs {
    #[arg(value_enum)]
    pub problem: OtProblem,
    /// Matrix CSV files with a `rows,cols` header line.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Structural weight for fgw and fused.
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    /// Random starting plans tried besides the product and identity starts.
    #[arg(long, default_value_t = 8)]
    pub restarts: usize,
    /// Seed for the random starts.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also report the best permutation found by enumeration (at most 6 points).
    #[arg(long)]
    pub oracle: bool,
    /// Directory receiving plan.csv.
    #[arg(long, default_value = "gwib-out")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
    /// Strength of covariate-dependent treatment assignment.
    #[arg(long, default_value_t = 2.0)]
    pub bias: f64,
    /// Standard deviation of the outcome noise.
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Destination CSV.
    #[arg(long)]
    pub out: PathBuf,
}
