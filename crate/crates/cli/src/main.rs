//! `secure-jscc`: train, evaluate, sweep and plot secure JSCC experiments.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for runtime errors.

mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use secure_jscc::error::Error;

#[derive(Parser, Debug)]
#[command(name = "secure-jscc", version, about = "Secure deep JSCC experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    W,
    Alpha,
    SnrEve,
    M,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Family {
    /// Mean adversary cross-entropy against Bob's SSIM.
    PrivacyUtility,
    /// Adversary accuracy against the legitimate SNR.
    AccuracySnr,
    /// SSIM and adversary accuracy over the (w, alpha) grid.
    Surface,
}

#[derive(clap::Args, Debug, Clone)]
pub struct ConfigArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in configuration used when no file is given.
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    /// Overrides the run seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train from scratch, or resume from a checkpoint.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Run directory (defaults to the configured output directory).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Resume this checkpoint instead of starting fresh.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint over the configured SNR grid, channel kinds and scenarios.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluation settings; the codec must match the checkpoint's.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output CSV (defaults to `eval.csv` next to the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Channel draws per test image.
        #[arg(long)]
        repeats: Option<usize>,
        /// Overrides the evaluation seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train and evaluate once per axis value and aggregate into one CSV.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated axis values (defaults depend on the axis).
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Option<Vec<f64>>,
        /// Comma-separated run seeds; each value is trained once per seed.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        seeds: Option<Vec<u64>>,
        /// Sweep directory holding one run per point and `sweep.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render charts from a metrics or sweep CSV.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, value_enum)]
        family: Family,
        /// Output directory for SVG files.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { cfg, out, checkpoint } => {
            let dir = commands::train(&cfg, out, checkpoint)?;
            println!("{}", dir.display());
        }
        Command::Eval {
            checkpoint,
            config,
            out,
            repeats,
            seed,
        } => {
            let (path, rows) = commands::eval(&checkpoint, config.as_deref(), out, repeats, seed)?;
            println!("{} rows written to {}", rows, path.display());
        }
        Command::Sweep {
            cfg,
            axis,
            values,
            seeds,
            out,
        } => {
            let path = commands::sweep(&cfg, axis, values, seeds, out)?;
            println!("{}", path.display());
        }
        Command::Plot { metrics, family, out } => {
            for f in plot::plot(&metrics, family, &out)? {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_config() => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
