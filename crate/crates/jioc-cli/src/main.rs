//! `jioc`: benchmark runner for class-incremental training experiments.
//!
//! Subcommands: `generate` materializes a synthetic long-tail task stream,
//! `train` runs the seed/variant sweep with checkpointing, `report` merges
//! finished runs. Exit codes: 1 configuration error, 2 data/IO error,
//! 3 numeric failure during training.

mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use jioc::error::{Error, Result};

use crate::config::{schema_help, RunConfig};

#[derive(Parser)]
#[command(
    name = "jioc",
    version,
    about = "Incremental-learning benchmark: generate data, train task streams, merge reports",
    after_help = schema_help(),
    after_long_help = schema_help()
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines (see the key table below).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override one config key, repeatable; highest precedence.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Output directory root (shorthand for --set out_dir=DIR).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Comma-separated seed list (shorthand for --set seeds=LIST).
    #[arg(long, value_name = "LIST")]
    seeds: Option<String>,

    /// Single loss variant (shorthand for --set loss_variants=NAME).
    #[arg(long, value_name = "NAME")]
    variant: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic task stream and print its per-class counts.
    Generate(ConfigArgs),
    /// Train one run per seed and loss variant, with resumable checkpoints.
    Train(ConfigArgs),
    /// Merge finished run directories into one comparison report.
    Report {
        /// Run directories, each holding seed_*/metrics.json or metrics.json.
        #[arg(required = true, value_name = "DIR")]
        dirs: Vec<PathBuf>,

        /// Directory for the merged artifacts.
        #[arg(long, value_name = "DIR", default_value = "report")]
        out: PathBuf,
    },
}

fn resolve_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(path) = &args.config {
        config.apply_file(path)?;
    }
    for assignment in &args.set {
        config.apply_set(assignment)?;
    }
    if let Some(seeds) = &args.seeds {
        config.apply("seeds", seeds, "--seeds")?;
    }
    if let Some(variant) = &args.variant {
        config.apply("loss_variants", variant, "--variant")?;
    }
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(args) => pipeline::cmd_generate(&resolve_config(args)?),
        Command::Train(args) => pipeline::cmd_train(&resolve_config(args)?),
        Command::Report { dirs, out } => pipeline::cmd_report(dirs, out),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Shape { .. } => 1,
        Error::Io { .. } | Error::Format { .. } | Error::Domain(_) => 2,
        Error::Numeric(_) => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("JIOC_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
