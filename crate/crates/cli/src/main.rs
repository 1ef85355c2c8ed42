mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use msvol::Error;

use settings::{McArgs, ModelArgs, QuadArgs};

/// Pricing, calibration and validation for the two-factor SPX/VIX volatility model.
#[derive(Debug, Parser)]
#[command(name = "msvol", version)]
pub struct Cli {
    /// Flat `key = value` file; flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Write the main output here instead of stdout.
    #[arg(long, short, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Heston,
    Msv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Market {
    Spx,
    Vix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SurfaceKind {
    /// Corrected minus uncorrected implied vols.
    Difference,
    Corrected,
    Uncorrected,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Price SPX options; prints leading, correction and total per strike.
    PriceSpx {
        /// Index level.
        #[arg(long, default_value_t = 2000.0)]
        x: f64,
        /// Strikes, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        strikes: Vec<f64>,
        /// Time to maturity in years.
        #[arg(long)]
        tau: f64,
        #[arg(long)]
        put: bool,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        quad: QuadArgs,
    },
    /// Price VIX options; prints leading, correction and total per strike.
    PriceVix {
        #[arg(long, value_delimiter = ',', required = true)]
        strikes: Vec<f64>,
        #[arg(long)]
        tau: f64,
        #[arg(long)]
        put: bool,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        quad: QuadArgs,
    },
    /// Fit a model to a quote file and write the result as JSON.
    Calibrate {
        model: ModelKind,
        #[arg(long)]
        quotes: PathBuf,
        /// Fit only quotes traded before this date (YYYY-MM-DD).
        #[arg(long)]
        split_date: Option<chrono::NaiveDate>,
        /// Skip the volume, price and expiry filters.
        #[arg(long)]
        no_filter: bool,
        /// Risk-free rate.
        #[arg(long, allow_hyphen_values = true)]
        r: Option<f64>,
    },
    /// Implied-vol grid (strike rows, maturity columns) as CSV.
    ImvolSurface {
        market: Market,
        #[arg(long, value_delimiter = ',', required = true)]
        strikes: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        maturities: Vec<f64>,
        #[arg(long, value_enum, default_value_t = SurfaceKind::Difference)]
        kind: SurfaceKind,
        /// Slow factor of the uncorrected surface.
        #[arg(long, default_value_t = 0.0197)]
        base_z: f64,
        /// Index level for SPX.
        #[arg(long, default_value_t = 2000.0)]
        x: f64,
        /// VIX level the VIX prices are inverted against.
        #[arg(long, default_value_t = 20.0)]
        vix_level: f64,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        quad: QuadArgs,
    },
    /// Compare analytic prices with Monte Carlo estimates.
    Validate {
        market: Market,
        #[arg(long, value_delimiter = ',', required = true)]
        strikes: Vec<f64>,
        #[arg(long)]
        tau: f64,
        #[arg(long, default_value_t = 2000.0)]
        x: f64,
        #[arg(long)]
        put: bool,
        /// Exit with status 3 when any point is more than 3 standard errors away.
        #[arg(long)]
        strict: bool,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        quad: QuadArgs,
        #[command(flatten)]
        mc: McArgs,
    },
    /// Error tables by underlying and maturity bucket for fitted models.
    ErrorReport {
        #[arg(long)]
        quotes: PathBuf,
        /// Calibration result JSON of the model to report.
        #[arg(long)]
        fitted: PathBuf,
        /// Calibration result JSON of a benchmark; adds its columns and the ratio.
        #[arg(long)]
        benchmark: Option<PathBuf>,
        #[arg(long)]
        no_filter: bool,
    },
    /// Write a synthetic quote file generated from known parameters.
    Synth {
        model: ModelKind,
        #[arg(long, default_value_t = 6)]
        dates: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        start: Option<chrono::NaiveDate>,
        /// Also write the generating states as CSV.
        #[arg(long)]
        states: Option<PathBuf>,
        #[command(flatten)]
        model_args: ModelArgs,
    },
}

/// Exit status of an error: 1 usage, 2 data, 3 numerical.
fn exit_status(e: &Error) -> u8 {
    match e {
        Error::InvalidParameter { .. }
        | Error::TimeScaleSeparation { .. }
        | Error::ContourViolation { .. }
        | Error::McConfig(_) => 1,
        Error::Data(_) | Error::Io(_) | Error::LengthMismatch { .. } => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_status(&e))
        }
    }
}
