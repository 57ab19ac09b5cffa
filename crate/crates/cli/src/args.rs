//! Command-line flags. Every flag is optional so that configuration-file
//! entries and defaults can fill the gaps.

use std::path::PathBuf;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use usage_anomaly::ingest::CountryCode;
use usage_anomaly::pca::ComponentPolicy;

use crate::commands::{Hold, Magnitudes};
use crate::output::Format;

#[derive(Debug, Parser)]
#[command(
    name = "usage-anomaly",
    version,
    about = "Detect anomalous periods in per-country circumvention-tool usage"
)]
pub struct Cli {
    /// Configuration file of `key = value` lines; flags override it
    #[arg(long, global = true, env = "USAGE_ANOMALY_CONFIG")]
    pub config: Option<PathBuf>,
    /// Print the resolved configuration and exit
    #[arg(long, global = true)]
    pub print_config: bool,
    /// Increase log verbosity (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the rolling detector and write residual and flag tables
    Detect(DetectArgs),
    /// Rank countries by residual dispersion over a period
    Rank(RankArgs),
    /// Measure detection rates of injected synthetic anomalies
    Inject(InjectArgs),
    /// Score detector flags against a list of reported events
    Evaluate(EvaluateArgs),
    /// Download a per-country usage table
    Fetch(FetchArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Usage CSV with at least date,country,users columns
    #[arg(long)]
    pub input: Option<String>,
    /// Drop countries that never reach this many daily users [default: 500]
    #[arg(long)]
    pub min_users: Option<f64>,
    /// Longest run of missing days to interpolate [default: 7]
    #[arg(long)]
    pub max_gap: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DetectorArgs {
    /// Days of history in each PCA window [default: 180]
    #[arg(long)]
    pub window: Option<usize>,
    /// Normal-subspace size: a count or `kaiser` [default: 12]
    #[arg(long)]
    pub components: Option<ComponentPolicy>,
    /// Threshold half-width in MADs [default: 2.5]
    #[arg(long)]
    pub mad_k: Option<f64>,
    /// Factor applied to the raw MAD [default: 1.4826]
    #[arg(long)]
    pub mad_consistency: Option<f64>,
    /// Lower bound on the usage level used to scale residuals [default: 1]
    #[arg(long)]
    pub scale_floor: Option<f64>,
    /// Residuals needed before a country can be flagged [default: 30]
    #[arg(long)]
    pub min_history: Option<usize>,
    /// Residuals kept for the rolling threshold [default: window]
    #[arg(long)]
    pub threshold_history: Option<usize>,
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Directory for output files [default: .]
    #[arg(long)]
    pub out_dir: Option<String>,
    /// csv or json [default: csv]
    #[arg(long)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub detector: DetectorArgs,
    #[command(flatten)]
    pub out: OutArgs,
    /// First day to report
    #[arg(long)]
    pub from: Option<NaiveDate>,
    /// Last day to report
    #[arg(long)]
    pub to: Option<NaiveDate>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub detector: DetectorArgs,
    #[command(flatten)]
    pub out: OutArgs,
    /// Residual table written by `detect`, instead of rerunning it
    #[arg(long)]
    pub residuals: Option<String>,
    #[arg(long)]
    pub from: Option<NaiveDate>,
    #[arg(long)]
    pub to: Option<NaiveDate>,
    /// Rank over the trailing N days, ending at --to or the last day
    #[arg(long, conflicts_with = "from")]
    pub last_days: Option<usize>,
    /// Number of countries to list [default: 10]
    #[arg(long)]
    pub top: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub detector: DetectorArgs,
    #[command(flatten)]
    pub out: OutArgs,
    /// Target country [default: be, or aa with --synthetic]
    #[arg(long)]
    pub country: Option<CountryCode>,
    /// First day of the injection period [default: 2013-08-21]
    #[arg(long)]
    pub start: Option<NaiveDate>,
    /// Last day of the injection period [default: 2014-02-21]
    #[arg(long)]
    pub end: Option<NaiveDate>,
    /// Runs per magnitude [default: 1000]
    #[arg(long)]
    pub runs: Option<usize>,
    /// Experiment seed [default: 1]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated signed magnitudes [default: -1.0 to 1.0 in steps of 0.1]
    #[arg(long, allow_hyphen_values = true)]
    pub magnitudes: Option<Magnitudes>,
    /// Shortest ramp in days [default: 7]
    #[arg(long)]
    pub ramp_min: Option<usize>,
    /// Longest ramp in days [default: 49]
    #[arg(long)]
    pub ramp_max: Option<usize>,
    /// Plateau length: `ramp` or a day count [default: ramp]
    #[arg(long)]
    pub hold: Option<Hold>,
    /// Use a generated 50-country baseline instead of --input
    #[arg(long)]
    pub synthetic: bool,
    /// Noise level of the generated baseline [default: 0.03]
    #[arg(long)]
    pub noise: Option<f64>,
    /// Seed of the generated baseline [default: 1]
    #[arg(long)]
    pub baseline_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub detector: DetectorArgs,
    #[command(flatten)]
    pub out: OutArgs,
    /// Events file of date,country,description,applicable rows [default: bundled list]
    #[arg(long)]
    pub events: Option<String>,
    /// Flag table written by `detect`, instead of rerunning it
    #[arg(long)]
    pub flags: Option<String>,
    /// Days a flag may lie from the event date [default: 0]
    #[arg(long)]
    pub tolerance_days: Option<u32>,
}

#[derive(Debug, Args)]
pub struct FetchArgs {
    /// Source URL [default: Tor metrics relay users, Sep 2011 to Aug 2016]
    #[arg(long)]
    pub url: Option<String>,
    /// Destination file [default: userstats.csv in the data directory]
    #[arg(long)]
    pub output: Option<String>,
}
