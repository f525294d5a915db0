//! Command-line surface of the toolkit: `generate`, `train`, `predict`,
//! `eval` and `ablate`, each driven by one JSON run configuration.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::commands::{mode_name, Failure};
use crate::config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "talkit", version, about = "Temporal action localization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset with train and eval splits.
    Generate { config: PathBuf },
    /// Train a localizer on the train split, writing a checkpoint per epoch.
    Train { config: PathBuf },
    /// Decode the eval split with a checkpoint into a detections file.
    Predict {
        config: PathBuf,
        /// Checkpoint JSON to use instead of the latest one under the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score a detections file against the eval split.
    Eval {
        config: PathBuf,
        /// Detections file to score instead of `<output_dir>/detections.json`.
        #[arg(long)]
        detections: Option<PathBuf>,
    },
    /// Compare `cat` and `proj_cat` fusion on the same data and seeds.
    Ablate { config: PathBuf },
}

/// Parse `args` (program name first), run the command, and return the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("talkit: {f}");
            f.exit_code()
        }
    }
}

fn load(path: &PathBuf) -> Result<RunConfig, Failure> {
    RunConfig::load(path).map_err(Failure::Validation)
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Generate { config } => {
            let s = commands::generate(&load(&config)?)?;
            println!(
                "generated {} train and {} eval videos under {}",
                s.train_videos,
                s.eval_videos,
                s.data_dir.display()
            );
        }
        Command::Train { config } => {
            let s = commands::train(&load(&config)?)?;
            for (i, l) in s.epoch_losses.iter().enumerate() {
                println!("epoch {:3}  loss {l:.4}", i + 1);
            }
            if let Some(last) = s.checkpoints.last() {
                println!("wrote {} checkpoints; last {}", s.checkpoints.len(), last.display());
            }
        }
        Command::Predict { config, checkpoint } => {
            let s = commands::predict(&load(&config)?, checkpoint.as_deref())?;
            println!(
                "wrote detections for {} videos (at most {} per video) to {}",
                s.videos,
                s.max_per_video,
                s.detections.display()
            );
        }
        Command::Eval { config, detections } => {
            let report = commands::eval(&load(&config)?, detections.as_deref())?;
            print!("{}", report.table());
        }
        Command::Ablate { config } => {
            let (summary, reports) = commands::ablate(&load(&config)?)?;
            for (run, report) in summary.runs.iter().zip(&reports) {
                println!("== {} ==", mode_name(run.mode));
                print!("{}", report.table());
            }
            println!(
                "delta (proj_cat - cat): average mAP {:+.2}, Recall@1x {:+.2}",
                100.0 * summary.delta_average_map,
                100.0 * summary.delta_recall_at_1x
            );
        }
    }
    Ok(())
}
