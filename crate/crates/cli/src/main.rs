//! Command line frontend: pricing, verification, simulation, and estimation
//! subcommands over the altpricing library.
//!
//! Exit codes: 0 success, 1 invariant failure, 2 configuration error, 3 I/O
//! error. Identical configuration and seed produce byte-identical output.

// `!(x < y)` guards are deliberate: unlike `x >= y` they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "altprice",
    version,
    about = "Option pricing in markets without a riskless asset",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Price one contract with a chosen model.
    Price(PriceArgs),
    /// Run the randomized closed-form verification suite.
    Verify(VerifyArgs),
    /// Emit CSV artifacts from computed data.
    Simulate {
        #[command(subcommand)]
        artifact: SimulateCommand,
    },
    /// Rolling-window drift, volatility, and rate-ratio estimates from a price CSV.
    Estimate(EstimateArgs),
    /// Perpetual-derivative artifacts (same outputs as `simulate`).
    Perpetual {
        #[command(subcommand)]
        artifact: SimulateCommand,
    },
}

#[derive(Subcommand)]
enum SimulateCommand {
    /// Payout-rate curve xi(gamma) with the seven named points labeled.
    XiCurve(XiCurveArgs),
    /// Joint daily paths of a stock and its power-derivative companion.
    Paths(PathsArgs),
}

/// Pricing route selector.
#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Model {
    /// Closed form for the two-asset portfolio call.
    LrClosed,
    /// Quadrature cross-check of the closed form.
    LrQuad,
    /// Two-asset binomial tree.
    LrTree,
    /// Two-asset Monte Carlo under the stock-numeraire measure.
    LrMc,
    /// Single-asset binomial tree on the deflated price.
    PiTree,
    /// Single-asset Monte Carlo under the deflated measure.
    PiMc,
    /// Single-asset Monte Carlo through the deflated-numeraire estimator.
    DeflatedMc,
}

impl Model {
    fn as_str(self) -> &'static str {
        match self {
            Model::LrClosed => "lr-closed",
            Model::LrQuad => "lr-quad",
            Model::LrTree => "lr-tree",
            Model::LrMc => "lr-mc",
            Model::PiTree => "pi-tree",
            Model::PiMc => "pi-mc",
            Model::DeflatedMc => "deflated-mc",
        }
    }
}

/// Output serialization for reports.
#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Args)]
pub struct PriceArgs {
    /// Pricing model.
    #[arg(long, value_enum)]
    model: Model,
    /// JSON parameter document; see the repository README for the schema.
    #[arg(long)]
    config: PathBuf,
    /// Time steps for the tree models.
    #[arg(long, default_value_t = 800)]
    n: usize,
    /// Path count for the Monte Carlo models.
    #[arg(long, default_value_t = 100_000)]
    paths: usize,
    /// RNG seed for the Monte Carlo models.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Absolute tolerance for the quadrature model.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
pub struct VerifyArgs {
    /// Number of randomized instances.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// RNG seed for the instance grid.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Skip the finite-difference cross-checks.
    #[arg(long)]
    skip_finite_difference: bool,
    /// Negative control: flip a sign inside the time partial and expect failure.
    #[arg(long)]
    inject_sign_error: bool,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
pub struct XiCurveArgs {
    /// Ratio of twice the riskless rate to the squared volatility.
    #[arg(long)]
    delta: f64,
    /// Grid size between the curve's outermost named points.
    #[arg(long, default_value_t = 401)]
    n: usize,
    /// Lower end of the gamma grid (default: half a unit below the lowest named point).
    #[arg(long)]
    gamma_min: Option<f64>,
    /// Upper end of the gamma grid (default: half a unit above the highest named point).
    #[arg(long)]
    gamma_max: Option<f64>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
pub struct PathsArgs {
    /// Power of the companion derivative S^gamma.
    #[arg(long)]
    gamma: f64,
    /// Number of daily observations.
    #[arg(long, default_value_t = 512)]
    days: usize,
    /// Start price of both columns.
    #[arg(long, default_value_t = 1.0)]
    s0: f64,
    /// Daily drift of the stock.
    #[arg(long, default_value_t = 4.38e-4)]
    mu: f64,
    /// Daily volatility of the stock.
    #[arg(long, default_value_t = 1.935e-2)]
    sigma: f64,
    /// Daily riskless rate entering the companion's payout-rate exponent.
    #[arg(long, default_value_t = 1.635e-4)]
    r_f: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
pub struct EstimateArgs {
    /// Input CSV with `date,close` columns.
    #[arg(long)]
    input: PathBuf,
    /// Trailing window length in returns.
    #[arg(long, default_value_t = 512)]
    window: usize,
    /// Yield CSV with `date,annual_yield` columns, forward-filled per date.
    #[arg(long, conflicts_with = "annual_yield")]
    yields: Option<PathBuf>,
    /// Flat annual yield applied to every date.
    #[arg(long, default_value_t = 0.0)]
    annual_yield: f64,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Price(args) => commands::run_price(&args),
        Command::Verify(args) => commands::run_verify(&args),
        Command::Simulate { artifact } | Command::Perpetual { artifact } => match artifact {
            SimulateCommand::XiCurve(args) => commands::run_xi_curve(&args),
            SimulateCommand::Paths(args) => commands::run_paths(&args),
        },
        Command::Estimate(args) => commands::run_estimate(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
