//! Command-line surface: `train`, `eval`, `plot`, and `selftest`.
//!
//! Configuration comes exclusively from the config file plus the explicit
//! flag overrides below — environment variables are never consulted. The
//! global `--quiet` flag suppresses progress output; results (evaluation
//! summaries, selftest verdicts) are always printed.

pub mod plot;
pub mod selftest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::trainer::config::TrainConfig;
use crate::trainer::metrics::IterationMetrics;
use crate::trainer::{evaluate, train_with_options, TrainOptions, TrainOutcome};
use crate::Result;

/// Risk-constrained policy optimization trainer.
#[derive(Debug, Parser)]
#[command(name = "var-cpo", version, about)]
pub struct Cli {
    /// Suppress progress output (results are still printed).
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Subcommand to run.
    #[command(subcommand)]
    pub command: Command,
}

/// Available subcommands.
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy from a config file.
    Train {
        /// Path to the key=value config file.
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a frozen checkpointed policy.
    Eval {
        /// Checkpoint directory (as written during training).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of evaluation episodes.
        #[arg(long)]
        episodes: usize,
        /// Evaluation seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render metric plots from one or more runs' CSVs.
    Plot {
        /// Comma-separated metrics CSV paths (one per seed).
        #[arg(long, value_delimiter = ',', required = true)]
        inputs: Vec<PathBuf>,
        /// Output directory for the SVG panels.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in verification suites.
    Selftest,
}

/// Executes a parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Train { config, seed, out } => {
            run_train(&config, seed, out, cli.quiet)?;
            Ok(0)
        }
        Command::Eval { checkpoint, episodes, seed } => {
            let summary = evaluate(&checkpoint, episodes, seed)?;
            print!("{}", summary.render());
            Ok(0)
        }
        Command::Plot { inputs, out } => {
            let files = plot::run_plot(&inputs, &out)?;
            if !cli.quiet {
                for f in files {
                    println!("wrote {}", f.display());
                }
            }
            Ok(0)
        }
        Command::Selftest => Ok(if selftest::run_selftest() { 0 } else { 1 }),
    }
}

/// Loads the config, applies flag overrides, and trains.
pub fn run_train(
    config_path: &std::path::Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    quiet: bool,
) -> Result<TrainOutcome> {
    let mut config = TrainConfig::from_file(config_path)?;
    if let Some(seed) = seed {
        config.run.seed = seed;
    }
    if let Some(out) = out {
        config.run.out_dir = out;
    }
    let mut print_row = |m: &IterationMetrics| {
        println!(
            "iter {:>4}  steps {:>9}  reward {:>7.3}  mu {:>9.3}  p95 {:>9.3}  mode {:<14} {}",
            m.iteration,
            m.env_steps,
            m.reward_return,
            m.mu,
            m.cost_p95,
            m.mode.name(),
            if m.step.accepted { "step" } else { "hold" },
        );
    };
    let options = TrainOptions {
        build_env: None,
        progress: if quiet {
            None
        } else {
            Some(&mut print_row)
        },
    };
    let outcome = train_with_options(&config, options)?;
    if !quiet {
        println!("metrics: {}", outcome.csv_path.display());
        println!("checkpoint: {}", outcome.final_checkpoint.display());
    }
    Ok(outcome)
}
