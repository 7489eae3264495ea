//! Command-line harness for the streaming action-detection model.
//!
//! Exit codes: 0 success, 1 invariant or tolerance failure (including runtime
//! and I/O errors), 2 usage or configuration errors.

mod commands;
mod config;
mod datadir;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use malt_core::MaltError;

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "malt",
    about = "Streaming online action detection: top-k sparse attention, hierarchical \
             multi-scale encoder, weight-shared recurrent decoder",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize benchmark streams and write a train/eval split.
    GenData {
        /// Run configuration (TOML); desk-scale defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the data-generation seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Print the annotated default configuration and exit.
        #[arg(long)]
        print_default_config: bool,
    },
    /// Train a model; logs the loss breakdown per batch and writes
    /// best/last checkpoints plus a run manifest.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory from gen-data; synthesized on the fly if omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory for checkpoints and the manifest.
        #[arg(long)]
        out: PathBuf,
        /// Override the model/training seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Resume from a checkpoint written by a previous run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Frame stride of the per-epoch evaluation pass.
        #[arg(long, default_value_t = 16)]
        eval_stride: usize,
        /// Suppress per-step log lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a checkpoint: per-frame mAP and calibrated AP.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of .bin streams (or a gen-data root; its eval/ is used).
        #[arg(long)]
        data: PathBuf,
        /// Evaluate every stride-th frame (1 = full protocol).
        #[arg(long, default_value_t = 1)]
        stride: usize,
        /// Score with one-hot ground truth instead of the model (debug).
        #[arg(long)]
        oracle: bool,
        /// Also write the report records to this file.
        #[arg(long)]
        emit: Option<PathBuf>,
    },
    /// Frame-by-frame online inference over one stream file.
    Stream {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Stream file (.bin) to process.
        #[arg(long)]
        stream: PathBuf,
        /// Output prediction log (one JSON record per frame).
        #[arg(long)]
        emit: PathBuf,
    },
    /// Finite-difference gradient verification; nonzero exit on any breach.
    Gradcheck {
        /// Run configuration; the built-in tiny preset when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of sampled parameter slots for the end-to-end suite.
        #[arg(long, default_value_t = 32)]
        samples: usize,
        #[arg(long, default_value_t = 40)]
        seed: u64,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
    /// Train architecture variants with shared seeds and compare them.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated variants: full, no-sparse, no-aux, no-recurrent,
        /// add, n=<int>, k=<int>.
        #[arg(long, default_value = commands::ablate::DEFAULT_VARIANTS)]
        variants: String,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Frame stride of the variant evaluation pass.
        #[arg(long, default_value_t = 4)]
        eval_stride: usize,
    },
}

fn load_config(path: &Option<PathBuf>, tiny_default: bool) -> malt_core::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None if tiny_default => Ok(RunConfig::tiny()),
        None => Ok(RunConfig::desk_default()),
    }
}

fn apply_seed(config: &mut RunConfig, seed: Option<u64>) {
    if let Some(s) = seed {
        config.model.seed = s;
    }
}

fn dispatch(cli: Cli) -> malt_core::Result<()> {
    match cli.command {
        Command::GenData {
            config,
            out,
            seed,
            print_default_config,
        } => {
            if print_default_config {
                print!("{}", config::DEFAULT_CONFIG_TOML);
                return Ok(());
            }
            let mut run_config = load_config(&config, false)?;
            if let Some(s) = seed {
                run_config.data.seed = s;
            }
            commands::gendata::run(&run_config, &out)
        }
        Command::Train {
            config,
            data,
            out,
            seed,
            resume,
            eval_stride,
            quiet,
        } => {
            let mut run_config = load_config(&config, false)?;
            apply_seed(&mut run_config, seed);
            commands::train::run(
                &run_config,
                data.as_deref(),
                &out,
                resume.as_deref(),
                eval_stride,
                quiet,
            )
        }
        Command::Eval {
            checkpoint,
            data,
            stride,
            oracle,
            emit,
        } => commands::eval::run(&checkpoint, &data, stride, oracle, emit.as_deref()),
        Command::Stream {
            checkpoint,
            stream,
            emit,
        } => commands::stream::run(&checkpoint, &stream, &emit),
        Command::Gradcheck {
            config,
            samples,
            seed,
            tolerance,
        } => {
            let run_config = load_config(&config, true)?;
            commands::gradcheck::run(&run_config, samples, seed, tolerance)
        }
        Command::Ablate {
            config,
            variants,
            data,
            out,
            seed,
            eval_stride,
        } => {
            let mut run_config = load_config(&config, false)?;
            apply_seed(&mut run_config, seed);
            commands::ablate::run(&run_config, &variants, data.as_deref(), &out, eval_stride)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                MaltError::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
