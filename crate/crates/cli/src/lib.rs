//! Command-line front end for the `stockhmm` forecaster.
//!
//! [`run`] parses arguments, dispatches to a command and converts failures
//! into exit codes: 2 for bad arguments, 3 for data problems, 4 for
//! training or numerical failures. All output goes through the writers
//! handed to [`run`], so commands can be exercised in-process.

pub mod chart;
pub mod commands;
pub mod predictions;
pub mod reproduce;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_TRAINING: i32 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    pub fn training(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_TRAINING,
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::data(format!("i/o error: {e}"))
    }
}

pub type CmdResult = Result<(), Failure>;

#[derive(Debug, Parser)]
#[command(name = "stockhmm", version, about = "Hidden Markov model forecaster for next-day closing prices")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model on a date range of a price CSV and write it to a file.
    Train(TrainArgs),
    /// Predict every day of a test range and write predictions, a report and a chart.
    Backtest(BacktestArgs),
    /// Predict the close of a single day from its open.
    Predict(PredictArgs),
    /// Recompute MAPE and DPA from a predictions CSV.
    Report(ReportArgs),
    /// Run the reference AAPL/IBM experiments on user-supplied CSVs and
    /// print the results next to the published figures.
    Reproduce(ReproduceArgs),
    /// Write a synthetic two-regime price series as CSV.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Price CSV with Date, Open, High, Low and Close columns.
    pub csv: PathBuf,
    /// Column name overrides as role=name pairs, e.g. "close=Adj Close".
    #[arg(long)]
    pub columns: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// First training day (inclusive); defaults to the first bar.
    #[arg(long)]
    pub train_start: Option<NaiveDate>,
    /// Last training day (inclusive); defaults to the last bar.
    #[arg(long)]
    pub train_end: Option<NaiveDate>,
    /// Hidden states.
    #[arg(long, default_value_t = 4)]
    pub states: usize,
    /// Gaussian mixture components used to seed the emissions.
    #[arg(long, default_value_t = 4)]
    pub mixtures: usize,
    /// Training window and prediction context length in days.
    #[arg(long, default_value_t = 10)]
    pub latency: usize,
    /// Shortest sequence the prediction fallback may use.
    #[arg(long, default_value_t = 4)]
    pub min_latency: usize,
    /// Bin counts for fracChange, fracHigh and fracLow.
    #[arg(long, default_value = "50,10,10")]
    pub bins: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Emission seeding: per-component or shared.
    #[arg(long, default_value = "per-component")]
    pub emission_init: String,
    /// Where to write the model file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    /// Model file written by `train`.
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub test_start: NaiveDate,
    #[arg(long)]
    pub test_end: NaiveDate,
    /// Directory receiving predictions.csv, report.txt and chart.svg.
    #[arg(long)]
    pub report_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Text,
    /// `date,open,predicted_close,frac_change,latency_used,log_likelihood`
    Csv,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Day to predict; history is taken from bars strictly before it.
    #[arg(long)]
    pub date: NaiveDate,
    /// Opening price of that day.
    #[arg(long)]
    pub open: f64,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// predictions.csv written by `backtest`.
    pub predictions: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    /// Daily AAPL prices covering 2003-02-10 to 2005-01-21.
    #[arg(long)]
    pub aapl: Option<PathBuf>,
    /// Daily IBM prices covering the same period.
    #[arg(long)]
    pub ibm: Option<PathBuf>,
    #[arg(long)]
    pub columns: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of weekday bars.
    #[arg(long, default_value_t = 360)]
    pub bars: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "2020-01-06")]
    pub start: NaiveDate,
    /// Output path; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Runs the command line `args` (program name first) and returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = write!(err, "{e}");
                    EXIT_USAGE
                }
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(&a, out, err),
        Command::Backtest(a) => commands::backtest(&a, out, err),
        Command::Predict(a) => commands::predict(&a, out),
        Command::Report(a) => commands::report(&a, out),
        Command::Reproduce(a) => reproduce::run(&a, out, err),
        Command::Synth(a) => commands::synth(&a, out),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}
