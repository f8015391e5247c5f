//! `permwatch` command line.

mod commands;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "permwatch", version, about = "Permission-group expansion and custom-permission analysis for APK corpora")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Options,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Options {
    /// APK directory (scan, pairs), event file (simulate, monitor) or
    /// intermediate directory (expand, stats, custom, report).
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Corpus metadata CSV for scan.
    #[arg(long, global = true)]
    pub metadata: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "permwatch-out")]
    pub out: PathBuf,
    /// Permission-group catalog TSV; the shipped catalog when absent.
    #[arg(long, global = true)]
    pub catalog: Option<PathBuf>,
    /// Third-party SDK package prefixes, one per line.
    #[arg(long = "sdk-prefixes", global = true)]
    pub sdk_prefixes: Option<PathBuf>,
    /// Column keyword to category map.
    #[arg(long, global = true)]
    pub keywords: Option<PathBuf>,
    /// Platform permission list.
    #[arg(long = "aosp-list", global = true)]
    pub aosp_list: Option<PathBuf>,
    /// Detection count at which an app is flagged.
    #[arg(long, global = true, default_value_t = permwatch::stats::DEFAULT_THRESHOLD)]
    pub threshold: u32,
    /// Comma-separated thresholds for the sensitivity sweep.
    #[arg(long, global = true, value_delimiter = ',')]
    pub sweep: Option<Vec<u32>>,
    /// Worker threads; all cores when absent.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract manifest facts from a directory of APKs.
    Scan,
    /// Detect permission-group expansions across version chains.
    Expand,
    /// Detection-label association statistics.
    Stats,
    /// Classify custom permission definitions.
    Custom,
    /// Link exposed providers with apps that query them.
    Pairs,
    /// Replay a grant scenario on the device model.
    Simulate,
    /// Replay a package event log and emit notifications.
    Monitor,
    /// Render tables and figures from the intermediates.
    Report,
}

fn run(cli: Cli) -> error::Result<()> {
    let opts = &cli.opts;
    if let Some(n) = opts.workers {
        if n == 0 {
            return Err(error::CliError::invalid("--workers must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| error::CliError::Internal(e.to_string()))?;
    }
    match cli.command {
        Command::Scan => commands::scan(opts),
        Command::Expand => commands::expand(opts),
        Command::Stats => commands::stats(opts),
        Command::Custom => commands::custom(opts),
        Command::Pairs => commands::pairs(opts),
        Command::Simulate => commands::simulate(opts),
        Command::Monitor => commands::monitor(opts),
        Command::Report => commands::report(opts),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("permwatch: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
