mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use regime_bench::imputers::Method;

/// Regime-stratified stress testing for CGM imputation.
#[derive(Parser, Debug)]
#[command(name = "regime-bench", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct InputArgs {
    /// CGM CSV (patient_id,timestamp,glucose,carbs,bolus,basal).
    #[arg(long)]
    pub input: PathBuf,
    /// Observation gap in minutes that starts a new episode.
    #[arg(long, default_value_t = 240)]
    pub partition_gap: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    A,
    B,
    C,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus: truth.csv, tcr.csv, labels.csv and
    /// optionally gapped.csv.
    Synth {
        #[arg(long, default_value_t = 7)]
        days: usize,
        #[arg(long, default_value_t = 0.0)]
        noise_std: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Also write gapped.csv with sensor dropouts.
        #[arg(long)]
        gaps: bool,
        /// Missingness model for the dropouts; a built-in one otherwise.
        #[arg(long, requires = "gaps")]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the missingness model from gapped data.
    Fit {
        #[command(flatten)]
        input: InputArgs,
        /// Minimum gaps per regime needed to fit a duration mixture.
        #[arg(long, default_value_t = 30)]
        min_gaps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample realistic masks from a fitted model.
    Mask {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build regime-specific masks: writes masks.json and windows.json.
    Stress {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_enum, ignore_case = true)]
        protocol: ProtocolArg,
        /// Protocol A: fraction of each episode to mask.
        #[arg(long, default_value_t = 0.1)]
        ratio: f64,
        /// Protocol B: meals per day.
        #[arg(long, default_value_t = 1)]
        n_peaks: usize,
        /// Protocol C: window length in minutes.
        #[arg(long, default_value_t = 60)]
        hypo_window_min: i64,
        /// Protocol C: TCR metadata CSV.
        #[arg(long)]
        tcr: Option<PathBuf>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fill masked samples with baselines, or validate an external file.
    Impute {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        masks: PathBuf,
        #[arg(long, value_delimiter = ',', required_unless_present = "external", conflicts_with = "external")]
        method: Vec<Method>,
        /// External-imputation CSV to check and normalise.
        #[arg(long)]
        external: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score imputations on masked samples: writes report.json and table.txt.
    Evaluate {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, required = true, num_args = 1..)]
        imputed: Vec<PathBuf>,
        #[arg(long)]
        masks: PathBuf,
        /// Score only masked samples inside these windows.
        #[arg(long)]
        windows: Option<PathBuf>,
        /// Free-form condition label, e.g. the masking ratio.
        #[arg(long, default_value = "all")]
        condition: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Conditional distribution of imputed values against truth.
    Calibrate {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, required = true, num_args = 1..)]
        imputed: Vec<PathBuf>,
        #[arg(long)]
        masks: PathBuf,
        /// Restrict to masked samples inside these windows.
        #[arg(long)]
        windows: Option<PathBuf>,
        /// Restrict to masked samples whose truth is below this value.
        #[arg(long)]
        below: Option<f64>,
        /// Restrict to masked samples whose truth is above this value.
        #[arg(long)]
        above: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regime-conditional imputation: Lerp on stationary gaps, the external
    /// model elsewhere.
    Route {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        external: Option<PathBuf>,
        /// Method to take from the external file when it holds several.
        #[arg(long)]
        external_method: Option<String>,
        /// Gradient threshold, mg/dL/min.
        #[arg(long, default_value_t = 0.6)]
        threshold: f64,
        #[arg(long, default_value_t = 30)]
        context_min: i64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge evaluation reports into one table.
    Report {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    commands::configure_threads()?;
    commands::run(cli)
}
