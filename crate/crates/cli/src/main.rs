//! `geoqa`: build the environment, generate and check QA data, run the
//! agents and score them.
//!
//! Exit status: 0 success, 1 validation failure, 2 configuration error,
//! 3 backend failure.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::CliConfig;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Config(String),
    Backend(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Config(_) => 2,
            CliError::Backend(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation failed: {m}"),
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Backend(m) => write!(f, "backend failure: {m}"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "geoqa", version, about = "Hybrid database + map-tool question answering pipeline")]
struct Cli {
    /// TOML config file; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic CSV fixture (communities and POIs per city).
    Fixture {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        communities: Option<usize>,
        #[arg(long)]
        pois: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write the built-in question templates as editable TOML files.
    Templates {
        #[arg(long)]
        out: PathBuf,
    },
    /// Load fixture CSVs into a store file.
    Ingest {
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Compute the proximity pair tables of a store in place.
    Pairs {
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Resolve every tool request of a dataset through the synthetic provider into the cache.
    CachePopulate {
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Generate QA instances from the templates; the cache is filled as needed and saved.
    Generate {
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        attempts: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-execute every SQL step, replay every tool step and re-derive every answer.
    Validate {
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Stratified 8:1:1 train/val/test split per template.
    Split {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run agent episodes and write transcripts and a report to <runs>/<name>.
    Run {
        #[command(flatten)]
        run: RunArgs,
        /// Gold stages to inject: any of slu, sql, api (comma separated).
        #[arg(long, value_delimiter = ',')]
        inject: Vec<InjectStage>,
    },
    /// Re-score a persisted run directory against its dataset.
    Eval {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Run the four injection rungs: none, slu, slu+sql, slu+sql+api.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InjectStage {
    Slu,
    Sql,
    Api,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SluChoice {
    Lexicon,
    Fewshot,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run name; the run directory is <runs>/<name>.
    #[arg(long)]
    name: String,
    /// Questions to run (default: <splits>/test.jsonl).
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    runs: Option<PathBuf>,
    /// Use the gold-replay backend instead of the configured endpoint.
    #[arg(long)]
    oracle: bool,
    #[arg(long, value_enum, default_value = "lexicon")]
    slu: SluChoice,
    /// Example pool for the few-shot SLU strategy (default: <splits>/train.jsonl).
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long)]
    step_cap: Option<usize>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Replace an existing run directory.
    #[arg(long)]
    overwrite: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(p) => CliConfig::load(p),
        None => Ok(CliConfig::default()),
    }
    .and_then(|c| c.validate().map(|_| c));
    let result = cfg.and_then(|cfg| commands::dispatch(&cfg, cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
