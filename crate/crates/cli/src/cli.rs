use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::suites::Suite;

/// Environment variable that overrides `--threads`.
pub const THREADS_ENV: &str = "OU_LEVY_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "ou-levy",
    version,
    about = "Simulation lab for OU processes driven by compound Poisson noise"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Built-in config: gaussian52-small or z3-exponential.
    #[arg(long, global = true, conflicts_with = "config", value_name = "NAME")]
    pub preset: Option<String>,
    /// Master seed; overrides the config.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Monte Carlo replicas; at least 1000.
    #[arg(long, global = true, value_name = "N")]
    pub replicas: Option<usize>,
    /// Output directory; results go to stdout without one.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads (OU_LEVY_THREADS takes precedence).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run property suites and print a JSON report.
    Verify {
        #[arg(value_enum)]
        suite: Suite,
    },
    /// Total-variation decay table as CSV.
    TvDecay,
    /// Bound curves as CSV.
    Bounds,
    /// Coupling transcripts as JSON lines.
    CoupleTrace {
        /// Number of transcripts.
        #[arg(long, default_value_t = 100)]
        count: usize,
    },
}
