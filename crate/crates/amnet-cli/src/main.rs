//! `amnet` command line: train, track, eval, synth.
//!
//! Exit codes: 0 success, 2 bad configuration or flags, 3 numeric failure
//! during training, 4 unreadable or mismatched checkpoint, 5 bad sequence
//! data or image I/O, 1 anything else.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use amnet_core::Error;

#[derive(Parser)]
#[command(name = "amnet", version, about = "Two-stream appearance + motion tracker")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model on the synthetic corpus described by the config.
    Train {
        /// Run configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output checkpoint path; the loss log lands next to it.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the training seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Track one sequence directory and write one box per frame.
    Track {
        /// Trained checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        /// Sequence directory (img/ + groundtruth_rect.txt).
        #[arg(long)]
        seq: PathBuf,
        /// Output CSV: frame_index,x,y,w,h.
        #[arg(long)]
        out: PathBuf,
        /// Also write frames with the predicted box drawn in.
        #[arg(long)]
        render: Option<PathBuf>,
        /// Run configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate a checkpoint over a dataset (one-pass, no re-init).
    Eval {
        /// Trained checkpoint; optional when --oracle is given.
        #[arg(long, required_unless_present = "oracle")]
        ckpt: Option<PathBuf>,
        /// Dataset root with one sequence directory per entry.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Report directory (curves, per-sequence table, summary).
        #[arg(long)]
        out: PathBuf,
        /// Also evaluate with the motion stream disabled and write the
        /// paired report under <out>/ablation.
        #[arg(long)]
        ablation: bool,
        /// Separately trained appearance-only checkpoint for --ablation;
        /// defaults to the main checkpoint with its motion channel zeroed.
        #[arg(long)]
        ablation_ckpt: Option<PathBuf>,
        /// Echo ground truth instead of running a model; checks the
        /// metric pipeline's ceiling.
        #[arg(long, conflicts_with = "ablation")]
        oracle: bool,
        /// Run configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Generate a synthetic dataset on disk.
    Synth {
        /// Run configuration (JSON); the synth section drives generation.
        #[arg(long)]
        config: PathBuf,
        /// Dataset root to create.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the base seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config { .. } => 2,
        Error::NonFiniteLoss { .. } => 3,
        Error::CheckpointFormat { .. } | Error::CheckpointArch { .. } => 4,
        Error::SequenceFormat { .. } | Error::Io { .. } | Error::Image { .. } => 5,
        _ => 1,
    }
}

fn run(cli: Cli) -> amnet_core::Result<()> {
    match cli.cmd {
        Cmd::Train { config, out, seed } => commands::cmd_train(&config, &out, seed),
        Cmd::Track { ckpt, seq, out, render, config } => {
            commands::cmd_track(&ckpt, &seq, &out, render.as_deref(), config.as_deref())
        }
        Cmd::Eval { ckpt, dataset, out, ablation, ablation_ckpt, oracle, config } => {
            commands::cmd_eval(commands::EvalArgs {
                ckpt: ckpt.as_deref(),
                dataset: dataset.as_deref(),
                out: &out,
                ablation,
                ablation_ckpt: ablation_ckpt.as_deref(),
                oracle,
                config: config.as_deref(),
            })
        }
        Cmd::Synth { config, out, seed } => commands::cmd_synth(&config, &out, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("amnet: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
