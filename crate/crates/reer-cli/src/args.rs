//! Command-line surface of the `reer` binary.
//!
//! Anything clap can reject (out-of-range case numbers, malformed levels,
//! missing batching flags) fails at parse time with exit code 2; errors past
//! parsing are runtime failures and exit with 1.

use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use reer_core::{ExpectileLevel, Method, Scenario, WeightMode, DEFAULT_REPS};

#[derive(Parser, Debug)]
#[command(name = "reer", version, about = "Streaming expectile regression toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run a seeded Monte-Carlo experiment and write a metrics table.
    Simulate(SimulateArgs),
    /// Replay a CSV file as a batch stream through an online estimator.
    Stream(StreamArgs),
    /// Score a fitted state against a holdout CSV (mean asymmetric loss).
    Eval(EvalArgs),
}

fn parse_tau(s: &str) -> Result<ExpectileLevel, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    ExpectileLevel::new(v).map_err(|e| e.to_string())
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    Scenario::parse(s).map_err(|e| e.to_string())
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: reer_core::Error| e.to_string())
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Generator case: 1 normal, 2 t(3), 3 heteroscedastic normal, 4 heteroscedastic t(3)
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub case: u8,

    /// s1 (fixed total, batch size varies) or s2 (fixed batch size, count varies)
    #[arg(long, value_parser = parse_scenario)]
    pub scenario: Scenario,

    /// Expectile level, strictly between 0 and 1
    #[arg(long, value_parser = parse_tau)]
    pub tau: ExpectileLevel,

    /// Rows per batch
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: u64,

    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub num_batches: u64,

    /// Monte-Carlo replications
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..), default_value_t = DEFAULT_REPS as u64)]
    pub reps: u64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Comma-separated subset of oracle,reer,paer,dcer
    #[arg(
        long,
        value_delimiter = ',',
        value_parser = parse_method,
        default_value = "oracle,reer,paer,dcer"
    )]
    pub methods: Vec<Method>,

    /// Metrics CSV destination
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamMethod {
    Reer,
    Paer,
    Dcer,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightModeArg {
    /// Weight each batch by its share of the final sample
    Final,
    /// Weight each batch by its share of the sample seen so far
    Cumulative,
}

impl WeightModeArg {
    pub fn to_core(self) -> WeightMode {
        match self {
            WeightModeArg::Final => WeightMode::FinalFraction,
            WeightModeArg::Cumulative => WeightMode::CumulativeFraction,
        }
    }
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("batching").required(true).args(["batch_size", "batch_column"])))]
pub struct StreamArgs {
    /// Source CSV (header row required)
    #[arg(long)]
    pub input: PathBuf,

    #[arg(long, value_enum)]
    pub method: StreamMethod,

    #[arg(long, value_parser = parse_tau)]
    pub tau: ExpectileLevel,

    /// Chunk rows into fixed-size batches, in file order
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: Option<u64>,

    /// Group contiguous runs of equal values in this column into batches
    #[arg(long)]
    pub batch_column: Option<String>,

    /// Response column name
    #[arg(long)]
    pub response: String,

    /// Comma-separated feature column names, in design order
    #[arg(long, value_delimiter = ',', required = true)]
    pub features: Vec<String>,

    /// Do not prepend a constant 1.0 column
    #[arg(long)]
    pub no_intercept: bool,

    /// Resume from a previously saved state file
    #[arg(long)]
    pub state: Option<PathBuf>,

    /// Write the final state here
    #[arg(long)]
    pub state_out: Option<PathBuf>,

    /// Write a per-batch estimate trajectory CSV here
    #[arg(long)]
    pub trace: Option<PathBuf>,

    /// Skip rows with missing or non-numeric values instead of aborting
    #[arg(long)]
    pub drop_bad_rows: bool,

    /// Batch weighting for --method paer (default: final)
    #[arg(long, value_enum)]
    pub weight_mode: Option<WeightModeArg>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// State or coefficients file to score
    #[arg(long)]
    pub state: PathBuf,

    /// Holdout CSV (header row required)
    #[arg(long)]
    pub input: PathBuf,

    #[arg(long)]
    pub response: String,

    #[arg(long, value_delimiter = ',', required = true)]
    pub features: Vec<String>,

    #[arg(long)]
    pub no_intercept: bool,

    #[arg(long)]
    pub drop_bad_rows: bool,

    /// Also write the report here (it always prints to stdout)
    #[arg(long)]
    pub out: Option<PathBuf>,
}
