use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use slds_mse::enumeration::DEFAULT_CAP;

#[derive(Debug, Parser)]
#[command(
    name = "slds-mse",
    version,
    about = "Analytic and Monte Carlo MSE of Kalman-type filters on switching linear systems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analytic MSE curve of every filter in the scenario.
    Analyze(AnalyzeArgs),
    /// Monte Carlo MSE and standard error of every filter.
    Simulate(SimulateArgs),
    /// Analytic vs. Monte Carlo with a pass/fail verdict.
    Compare(CompareArgs),
    /// Pairwise mode-merge analysis.
    Recommend(RecommendArgs),
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: PathBuf,

    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Override the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Override the scenario horizon.
    #[arg(long)]
    pub horizon: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Auto,
    Exact,
    Pruned,
    Aggregate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GainArg {
    /// Gain of the detected mode's own KF schedule.
    ModeSchedule,
    /// Riccati recursion along the detected mode sequence.
    DetectedPath,
}

#[derive(Debug, Args)]
pub struct MethodArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
    pub method: MethodArg,

    /// Beam width for `--method pruned`.
    #[arg(long, conflicts_with = "mass")]
    pub keep: Option<usize>,

    /// Kept-mass target P_c for `--method pruned`.
    #[arg(long)]
    pub mass: Option<f64>,

    /// Divide pruned aggregates by the kept mass.
    #[arg(long)]
    pub renormalize: bool,

    /// Maximum live trajectories during enumeration.
    #[arg(long, default_value_t = DEFAULT_CAP)]
    pub cap: usize,

    #[arg(long, value_enum, default_value_t = GainArg::ModeSchedule)]
    pub skf_gains: GainArg,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub method: MethodArgs,
    /// Write a line chart of the curves.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, value_enum, default_value_t = GainArg::ModeSchedule)]
    pub skf_gains: GainArg,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub method: MethodArgs,
    /// Relative tolerance for steps n >= 2.
    #[arg(long, default_value_t = 0.05)]
    pub rtol: f64,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Mean,
    Max,
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    /// Better of the two per-mode KFs.
    Modes,
    /// Best of the two per-mode KFs and the average KF.
    ModesOrAverage,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Relative MSE improvement below which a pair is merged.
    #[arg(long, default_value_t = 0.10)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value_t = MetricArg::Mean)]
    pub metric: MetricArg,
    #[arg(long, value_enum, default_value_t = BaselineArg::Modes)]
    pub baseline: BaselineArg,
    /// Also write the pairwise table as CSV.
    #[arg(long)]
    pub table: Option<PathBuf>,
}
