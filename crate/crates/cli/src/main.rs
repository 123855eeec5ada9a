//! `vmin`: Vmin interval prediction from the command line.

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use error::CliError;

const DEFAULT_SEED: u64 = 7;

#[derive(Parser, Debug)]
#[command(name = "vmin", version, about = "Distribution-free Vmin prediction intervals")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic chip population.
    Generate(GenerateArgs),
    /// Rank features with correlation-based feature selection.
    Select(SelectArgs),
    /// Fit an interval model for one (read point, temperature) target.
    Fit(FitArgs),
    /// Compute the conformal correction for a fitted model.
    Calibrate(CalibrateArgs),
    /// Write prediction intervals for new chips.
    Predict(PredictArgs),
    /// Cross-validated comparison of interval methods.
    Benchmark(BenchmarkArgs),
    /// Render a benchmark report, or the on-chip gain between two reports.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone)]
pub struct SeedArg {
    /// Master seed. Falls back to VMIN_SEED, then 7.
    #[arg(long, env = "VMIN_SEED")]
    pub seed: Option<u64>,
}

impl SeedArg {
    pub fn resolve(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Column schema; the naming convention is assumed when absent.
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct TargetArgs {
    /// Label read point in hours.
    #[arg(long = "rp", default_value_t = 0)]
    pub read_point: u32,
    /// Label temperature in degrees Celsius.
    #[arg(long = "temp", default_value_t = 25, allow_negative_numbers = true)]
    pub temperature: i32,
    #[arg(long, default_value = "both", value_parser = parse_feature_set)]
    pub features: vmin_core::dataset::FeatureSet,
}

fn parse_feature_set(s: &str) -> Result<vmin_core::dataset::FeatureSet, String> {
    s.parse()
}

fn parse_method(s: &str) -> Result<vmin_core::pipeline::Method, String> {
    s.parse()
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Output directory for chips.csv, schema.json and the manifest.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub chips: Option<usize>,
    #[arg(long)]
    pub homoscedastic: bool,
    #[arg(long)]
    pub anomaly_fraction: Option<f64>,
    /// Full generator configuration as JSON; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum Strategy {
    Merit,
    TopK,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub target: TargetArgs,
    #[arg(long, default_value_t = 10)]
    pub k_max: usize,
    #[arg(long, value_enum, default_value_t = Strategy::Merit)]
    pub strategy: Strategy,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub target: TargetArgs,
    #[arg(long, value_parser = parse_method)]
    pub method: vmin_core::pipeline::Method,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Fixed feature-subset size; chosen by the configured k selection when absent.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 0.25)]
    pub calibration_fraction: f64,
    /// Learner settings as JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Rows {
    /// The calibration share of the split the model was fitted with.
    Calibration,
    /// Every row of the file.
    All,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = Rows::Calibration)]
    pub rows: Rows,
    /// Must match the value used by `fit` when `--rows calibration`.
    #[arg(long, default_value_t = 0.25)]
    pub calibration_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Required for conformal methods.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// CSV of chips to predict; label columns are ignored.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated method names, e.g. gp,qr-linear,cqr-linear,cqr-gbt.
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    pub methods: Option<Vec<vmin_core::pipeline::Method>>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub calibration_fraction: Option<f64>,
    #[arg(long, value_parser = parse_feature_set)]
    pub features: Option<vmin_core::dataset::FeatureSet>,
    #[arg(long, value_delimiter = ',')]
    pub read_points: Option<Vec<u32>>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub temperatures: Option<Vec<i32>>,
    /// Full benchmark configuration as JSON; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for report.json, report.txt and the manifest.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Benchmark report JSON.
    #[arg(long)]
    pub report: PathBuf,
    /// Parametric-only report; prints the on-chip gain of `--report` over it.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Select(a) => commands::select(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Calibrate(a) => commands::calibrate(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Benchmark(a) => commands::benchmark(&a),
        Command::Report(a) => commands::report(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
