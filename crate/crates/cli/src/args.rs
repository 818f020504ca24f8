use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "mrtss", version, about = "Sample size and power for micro-randomized trials")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Smallest number of participants reaching a target power.
    Samplesize(SampleSizeArgs),
    /// Power achieved with a given number of participants.
    Power(PowerArgs),
    /// Run a JSON file of simulation scenarios and tabulate empirical power.
    Simulate(SimulateArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrendKind {
    Constant,
    Linear,
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RandMode {
    Day,
    Time,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
    /// Write to this file instead of standard output.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

/// Study layout and trends. Ignored when `--input` supplies a request file.
#[derive(Debug, Args)]
pub struct DesignArgs {
    /// Request JSON, same shape as the HTTP body.
    #[arg(long)]
    pub input: Option<PathBuf>,

    /// Study duration in days.
    #[arg(long)]
    pub days: Option<u32>,
    /// Decision times per day.
    #[arg(long)]
    pub per_day: Option<u32>,
    /// Constant randomization probability.
    #[arg(long, conflicts_with = "rand_csv")]
    pub prob: Option<f64>,
    /// File of `index,probability` rows for time-varying randomization.
    #[arg(long)]
    pub rand_csv: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "day")]
    pub rand_mode: RandMode,

    #[arg(long, value_enum)]
    pub avail: Option<TrendKind>,
    /// Average expected availability.
    #[arg(long, allow_negative_numbers = true)]
    pub avail_avg: Option<f64>,
    /// Expected availability on day 1.
    #[arg(long, allow_negative_numbers = true)]
    pub avail_init: Option<f64>,
    /// Day at which quadratic availability peaks or bottoms out.
    #[arg(long, alias = "avail-change-day")]
    pub avail_peak_day: Option<u32>,

    #[arg(long, value_enum)]
    pub effect: Option<TrendKind>,
    /// Average standardized proximal effect.
    #[arg(long, allow_negative_numbers = true)]
    pub effect_avg: Option<f64>,
    /// Standardized effect on day 1.
    #[arg(long, allow_negative_numbers = true)]
    pub effect_init: Option<f64>,
    /// Day of maximal proximal effect (quadratic trends).
    #[arg(long)]
    pub effect_peak_day: Option<u32>,

    /// Dimension of the control basis; defaults to the effect's.
    #[arg(long)]
    pub q: Option<usize>,
    /// Significance level.
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SampleSizeArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    /// Target power.
    #[arg(long)]
    pub power: Option<f64>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    /// Number of participants.
    #[arg(long)]
    pub n: Option<u32>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON array of scenarios.
    pub scenarios: PathBuf,
    /// Replace each scenario's seed with this value plus its position.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Listen address; defaults to MRTSS_BIND or 127.0.0.1:8080.
    #[arg(long)]
    pub bind: Option<String>,
}
