//! `crosslab` command-line front end.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crosslab::eval::{SplitMode, TaskKind};
use crosslab::transfer::Strategy;

#[derive(Parser)]
#[command(
    name = "crosslab",
    version,
    about = "Pedestrian crossing simulation and prediction lab"
)]
struct Cli {
    /// Worker threads for the compute pool (default: all cores).
    #[arg(long, global = true, env = "CROSSLAB_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, env = "CROSSLAB_SEED")]
    pub seed: Option<u64>,
    /// Output directory (default: the config's `output_dir`, else `out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = parse_split)]
    pub split: Option<SplitMode>,
    #[arg(long, value_parser = parse_task)]
    pub task: Option<TaskKind>,
    /// Strategies to compare; repeat or separate with commas.
    #[arg(long, value_delimiter = ',', value_parser = parse_strategy)]
    pub strategy: Vec<Strategy>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a trial dataset from the config's generation block.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "CROSSLAB_SEED")]
        seed: Option<u64>,
        /// Dataset directory (default: `<output_dir>/dataset`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract the feature table from one or more datasets.
    Extract {
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        #[arg(long, default_value = "features.csv")]
        out: PathBuf,
    },
    /// Cross-validate every model, then run transfer and strategy comparisons.
    Run(RunArgs),
    /// Transfer matrix and strategy comparison only.
    Transfer(RunArgs),
    /// Rank tests of one feature across groups of trials.
    Stats {
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        /// `country` or `condition`.
        #[arg(long, default_value = "country")]
        by: String,
        /// `wait`, `gap`, `speed` or `missed`.
        #[arg(long, default_value = "wait")]
        value: String,
        /// Keep only trials of this condition.
        #[arg(long)]
        condition: Option<String>,
        /// Keep only trials of this country.
        #[arg(long)]
        country: Option<String>,
        /// `two-sided`, `less` or `greater` (two-group tests only).
        #[arg(long, default_value = "two-sided")]
        alternative: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarise the reports of a finished run as Markdown.
    Report {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn parse_split(s: &str) -> Result<SplitMode, String> {
    s.parse().map_err(|e: crosslab::Error| e.to_string())
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    s.parse().map_err(|e: crosslab::Error| e.to_string())
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: crosslab::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Simulate { config, seed, out } => commands::simulate(&config, seed, out),
        Command::Extract { data, out } => commands::extract(&data, &out),
        Command::Run(args) => commands::run(&args, true),
        Command::Transfer(args) => commands::run(&args, false),
        Command::Stats {
            data,
            by,
            value,
            condition,
            country,
            alternative,
            out,
        } => commands::stats(&commands::StatsArgs {
            data,
            by,
            value,
            condition,
            country,
            alternative,
            out,
        }),
        Command::Report { out } => commands::report(&out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(if e.is_invalid_input() { 2 } else { 1 })
        }
    }
}
