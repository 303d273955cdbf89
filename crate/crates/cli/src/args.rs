//! Command-line definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use covreg::{Correction, MeanMode};

#[derive(Debug, Parser)]
#[command(name = "covreg", version, about = "Sparse covariance regression")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit at a fixed penalty.
    Fit(FitArgs),
    /// Choose the penalty by K-fold cross-validation, then refit on all rows.
    Cv(CvArgs),
    /// Debiased estimates, standard errors, intervals and edge lists.
    Infer(InferArgs),
    /// Run a simulation scenario and write summary tables.
    Simulate(SimulateArgs),
    /// Repeated half-splits and the covariates selected on both halves.
    Stability(StabilityArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Responses, n×p CSV with header.
    #[arg(long = "y")]
    pub y: PathBuf,
    /// Covariates, n×q CSV with header. Omit for q = 0.
    #[arg(long = "x")]
    pub x: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MeanArg::Colmean)]
    pub mean: MeanArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanArg {
    Colmean,
    Linreg,
}

impl From<MeanArg> for MeanMode {
    fn from(m: MeanArg) -> Self {
        match m {
            MeanArg::Colmean => MeanMode::ColumnMean,
            MeanArg::Linreg => MeanMode::LinearRegression,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectionArg {
    None,
    Bonferroni,
}

impl From<CorrectionArg> for Correction {
    fn from(c: CorrectionArg) -> Self {
        match c {
            CorrectionArg::None => Correction::None,
            CorrectionArg::Bonferroni => Correction::Bonferroni,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleArg {
    Min,
    OneSe,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GridArgs {
    /// Comma-separated α values; λ = αλ*, λ_g = (1−α)λ*.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    /// Number of log-spaced λ* values. Without it λ* runs over 0.01, 0.02, …, 1.
    #[arg(long)]
    pub nlam: Option<usize>,
    #[arg(long, default_value_t = 0.01)]
    pub lambda_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_max: f64,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, value_enum, default_value_t = RuleArg::Min)]
    pub rule: RuleArg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub lambda: f64,
    #[arg(long = "lambda-g")]
    pub lambda_g: f64,
    /// Also write Σ̂ᵢ for every subject.
    #[arg(long)]
    pub sigma: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub sigma: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InferArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Coefficient file written by `fit` or `cv`.
    #[arg(long)]
    pub coef: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = CorrectionArg::None)]
    pub correction: CorrectionArg,
    /// Constraint level of the direction program (default √(log(p(p+1)(q+1))/n)).
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long, default_value_t = 0.45)]
    pub beta: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    /// ma1, clique or hub.
    #[arg(long)]
    pub structure: String,
    /// continuous (1) or binary (2).
    #[arg(long)]
    pub setting: String,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 50)]
    pub p: usize,
    #[arg(long, default_value_t = 30)]
    pub q: usize,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Comma-separated subset of SparseCovReg, DenseCovReg, SparseSample, DenseSample.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long)]
    pub seed: u64,
    /// Debias SparseCovReg and score interval coverage.
    #[arg(long)]
    pub infer: bool,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Use the 20-point log grid at α = 0.5 unless grid flags are given.
    #[arg(long)]
    pub reduced_grid: bool,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct StabilityArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 100)]
    pub splits: usize,
    #[arg(long)]
    pub seed: u64,
    /// Fixed penalty for every half; cross-validated on each half when absent.
    #[arg(long, requires = "lambda_g")]
    pub lambda: Option<f64>,
    #[arg(long = "lambda-g", requires = "lambda")]
    pub lambda_g: Option<f64>,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Report covariates selected on both halves more than this many times.
    #[arg(long, default_value_t = 10)]
    pub threshold: usize,
    #[arg(long)]
    pub out: PathBuf,
}
