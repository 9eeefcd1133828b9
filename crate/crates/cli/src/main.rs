//! `mcd`: MCD estimation, theory constants, plug-in variances, influence
//! tables and simulations.
//!
//! Exit codes: 0 success, 1 invalid arguments or configuration, 2 I/O or
//! malformed input, 3 degenerate sample, 4 exhaustive search too large,
//! 5 unknown model, 6 singular derivative.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mcd_core::McdError;

#[derive(Debug, Parser)]
#[command(name = "mcd", version, about = "Minimum covariance determinant estimation and asymptotics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the MCD estimator to a CSV sample.
    Estimate(EstimateArgs),
    /// Closed-form constants for a spherical model.
    Theory(ModelArgs),
    /// Plug-in sandwich covariance of the fitted parameters.
    Variance(VarianceArgs),
    /// Tabulate the influence functions along a ray.
    Influence(InfluenceArgs),
    /// Monte-Carlo checks against the limiting theory.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
struct FitArgs {
    /// CSV file, one observation per row.
    input: PathBuf,
    /// First CSV row holds column names.
    #[arg(long)]
    header: bool,
    /// Fraction of observations kept in the subset.
    #[arg(long, default_value_t = 0.75)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Force exhaustive enumeration of subsets.
    #[arg(long)]
    exact: bool,
    /// Random starts for the concentration-step search.
    #[arg(long, default_value_t = 50)]
    restarts: usize,
    /// Output path (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[command(flatten)]
    fit: FitArgs,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// gaussian, student_t, student_t(<nu>) or uniform_ball.
    #[arg(long, default_value = "gaussian")]
    model: String,
    /// Degrees of freedom for student_t.
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 0.75)]
    gamma: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VarianceArgs {
    #[command(flatten)]
    fit: FitArgs,
    /// `kde`, or a model name used at the fitted location and scatter.
    #[arg(long, default_value = "kde")]
    density: String,
    #[arg(long)]
    nu: Option<f64>,
    /// `auto` or a positive kernel bandwidth.
    #[arg(long, default_value = "auto")]
    bandwidth: String,
}

#[derive(Debug, Args)]
struct InfluenceArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Grid points on [0, max radius].
    #[arg(long, default_value_t = 61)]
    points: usize,
    /// Largest norm on the grid (default three times the coverage radius).
    #[arg(long)]
    max_radius: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Check {
    Clt,
    Expansion,
    Plugin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EstimatorKind {
    Cstep,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PluginDensity {
    Kde,
    Oracle,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    check: Check,
    #[arg(long, default_value = "gaussian")]
    model: String,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 0.75)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = EstimatorKind::Cstep)]
    estimator: EstimatorKind,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    /// Sample sizes for the expansion check.
    #[arg(long, value_delimiter = ',', default_value = "200,800,3200")]
    ladder: Vec<usize>,
    #[arg(long, default_value = "auto")]
    bandwidth: String,
    #[arg(long, value_enum, default_value_t = PluginDensity::Kde)]
    density: PluginDensity,
    /// Also write the per-replication estimates as CSV.
    #[arg(long)]
    dump_reps: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(err: &McdError) -> u8 {
    match err {
        McdError::Io(_) | McdError::Parse { .. } => 2,
        McdError::DegenerateSample { .. } | McdError::DegenerateSubset { .. } | McdError::DegenerateMatrix { .. } => 3,
        McdError::TooLarge { .. } => 4,
        McdError::UnknownModel(_) => 5,
        McdError::SingularDerivative { .. } => 6,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Estimate(a) => commands::estimate(&a.fit),
        Command::Theory(a) => commands::theory(&a),
        Command::Variance(a) => commands::variance(&a),
        Command::Influence(a) => commands::influence(&a),
        Command::Simulate(a) => commands::simulate(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
