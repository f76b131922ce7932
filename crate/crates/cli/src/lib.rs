//! Command-line front end for `egohpo`: run configs, the external-command
//! black-box protocol, history files and data exports.

pub mod commands;
pub mod config;
pub mod history;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use egohpo::Direction;

pub use commands::{cmd_design, cmd_report, cmd_run, cmd_sensitivity, RunOptions};
pub use config::RunConfig;
pub use history::HistoryTable;

#[derive(Debug, Parser)]
#[command(
    name = "egohpo",
    version,
    about = "Batch Bayesian optimization of black-box hyperparameters"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the initial Latin-hypercube design as CSV.
    Design {
        #[arg(long)]
        config: PathBuf,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the optimization loop.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (history.csv, summary.json, meta.json).
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue the run recorded in the output directory.
        #[arg(long)]
        resume: bool,
        /// Maximum number of concurrent evaluations.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        parallel: Option<u64>,
        /// Write 0 instead of wall-clock durations.
        #[arg(long)]
        no_timing: bool,
    },
    /// ANOVA sensitivity tables from a history file.
    Sensitivity {
        #[arg(long)]
        history: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Convergence trace from a history file.
    Report {
        #[arg(long)]
        history: PathBuf,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
        /// Take the optimization direction from this config.
        #[arg(long, conflicts_with = "direction")]
        config: Option<PathBuf>,
        #[arg(long, default_value = "minimize")]
        direction: Direction,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Design { config, out, seed } => cmd_design(&load(&config, seed)?, &out),
        Command::Run {
            config,
            out,
            seed,
            resume,
            parallel,
            no_timing,
        } => {
            let cfg = load(&config, seed)?;
            let opts = RunOptions {
                resume,
                parallel: parallel.map(|p| usize::try_from(p).unwrap_or(usize::MAX)),
                timing: !no_timing,
            };
            let summary = cmd_run(&cfg, &out, &opts)?;
            println!("{}", summary.display());
            Ok(())
        }
        Command::Sensitivity {
            history,
            config,
            out,
        } => cmd_sensitivity(&history, &load(&config, None)?, &out),
        Command::Report {
            history,
            out,
            config,
            direction,
        } => {
            let direction = match config {
                Some(p) => load(&p, None).context("reading --config")?.direction,
                None => direction,
            };
            cmd_report(&history, direction, &out)
        }
    }
}
