//! `rmdda` command-line front end.
//!
//! Flag names follow the `MANOVA.RM` R interface where one exists
//! (`--iter`, `--resampling paramBS|wildBS`, `--seed`).

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "rmdda", version, about = "Repeated-measures MANOVA and descriptive discriminant analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load the input and report sample sizes and dropped subjects.
    Validate(ValidateArgs),
    /// Group, time and interaction tests on all variables (MATS + bootstrap).
    Manova(TestArgs),
    /// Per-variable repeated-measures ANOVA with a Bonferroni-adjusted alpha.
    Anova(TestArgs),
    /// Standardized discriminant function coefficients for two groups.
    Dda(DdaArgs),
    /// Covariance homogeneity and collinearity diagnostics.
    Diagnose(DiagnoseArgs),
    /// Monte-Carlo rejection rates for a synthetic scenario.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Long,
    Wide,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
pub enum Resampling {
    #[value(name = "paramBS")]
    #[serde(rename = "paramBS")]
    ParamBs,
    #[value(name = "wildBS")]
    #[serde(rename = "wildBS")]
    WildBs,
}

impl From<Resampling> for rmdda::Scheme {
    fn from(r: Resampling) -> Self {
        match r {
            Resampling::ParamBs => rmdda::Scheme::Parametric,
            Resampling::WildBs => rmdda::Scheme::Wild,
        }
    }
}

/// Where the data come from and how to read them.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Input CSV file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "long")]
    pub format: Format,
    /// JSON schema sidecar; individual column flags override its fields.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Group column.
    #[arg(long)]
    pub group: Option<String>,
    /// Subject id column.
    #[arg(long)]
    pub subject: Option<String>,
    /// Time column (long format).
    #[arg(long)]
    pub time: Option<String>,
    /// Outcome variables, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub variables: Option<Vec<String>>,
    /// Explicit time order, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub time_order: Option<Vec<String>>,
    /// Explicit group order, comma separated (fixes the DFC sign).
    #[arg(long, value_delimiter = ',')]
    pub group_order: Option<Vec<String>>,
    /// Missing-value sentinel besides the empty cell.
    #[arg(long)]
    pub na: Option<String>,
}

/// Where results go and how they are computed.
#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output directory (created if needed).
    #[arg(long, default_value = "rmdda-out")]
    pub out: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Write JSON artifacts only.
    #[arg(long, conflicts_with = "csv")]
    pub json: bool,
    /// Write CSV artifacts only.
    #[arg(long)]
    pub csv: bool,
}

impl OutputArgs {
    pub fn want_json(&self) -> bool {
        !self.csv
    }

    pub fn want_csv(&self) -> bool {
        !self.json
    }
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Bootstrap replicates B.
    #[arg(long, default_value_t = 10_000)]
    pub iter: usize,
    #[arg(long, value_enum, default_value = "paramBS")]
    pub resampling: Resampling,
    #[arg(long, default_value_t = 123)]
    pub seed: u64,
    /// Family-wise alpha (the per-variable table uses alpha / p).
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Relative eigenvalue cutoff for the pseudoinverse.
    #[arg(long, default_value_t = rmdda::linalg::DEFAULT_PINV_RTOL)]
    pub rtol: f64,
    /// Also write every bootstrap replicate to replicates.csv.
    #[arg(long)]
    pub dump_replicates: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CollinearityArgs {
    /// Condition-index threshold.
    #[arg(long, default_value_t = 30.0)]
    pub ci_threshold: f64,
    /// Variance-decomposition-proportion threshold (also the display cutoff).
    #[arg(long, default_value_t = 0.3)]
    pub vdp_threshold: f64,
    /// Leave the intercept column out of the collinearity design.
    #[arg(long)]
    pub no_intercept: bool,
    /// Variables never removed by the greedy collinearity pass, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub protected: Vec<String>,
}

#[derive(Debug, Args)]
pub struct DdaArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub collinearity: CollinearityArgs,
    /// Separate analysis for each time point.
    #[arg(long)]
    pub per_timepoint: bool,
    /// Drop collinear variables (greedy, at all time points) before the analysis.
    #[arg(long)]
    pub drop_collinear: bool,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub collinearity: CollinearityArgs,
    /// Also run the greedy removal pass and report its sequence.
    #[arg(long)]
    pub suggest_removals: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: PathBuf,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Monte-Carlo repetitions.
    #[arg(long, default_value_t = 400)]
    pub reps: usize,
    #[arg(long, default_value_t = 500)]
    pub iter: usize,
    #[arg(long, value_enum, default_value = "paramBS")]
    pub resampling: Resampling,
    #[arg(long, default_value_t = 123)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate(a) => commands::validate(a),
        Command::Manova(a) => commands::manova(a),
        Command::Anova(a) => commands::anova(a),
        Command::Dda(a) => commands::dda(a),
        Command::Diagnose(a) => commands::diagnose(a),
        Command::Simulate(a) => commands::simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
