//! Command-line front end: EXIF extraction, synthetic data, training,
//! mixture fitting, scoring and evaluation.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::config::{Overrides, RunConfig};

/// Exit code 2 for bad invocations and inputs, 1 for failures while running.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "exifgmm",
    version,
    about = "Detect generated faces with EXIF-pretrained features and a Gaussian mixture"
)]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the four camera tags of each file as one JSON line.
    Exif {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Write synthetic training and test splits.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the feature network on a manifest.
    Train {
        manifest: Option<PathBuf>,
        /// Checkpoint directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the mixture to a checkpoint's features and calibrate the threshold.
    FitGmm {
        checkpoint: Option<PathBuf>,
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a manifest, writing scores.csv, report.json and histogram.svg.
    Score {
        checkpoint: Option<PathBuf>,
        gmm: Option<PathBuf>,
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute accuracy, AP and AUC from a scores file.
    Evaluate {
        scores: Option<PathBuf>,
        /// CSV with `id,label` columns; overrides the scores' label column.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Write the metrics here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the whole chain on synthetic faces.
    Demo {
        #[arg(long)]
        out: PathBuf,
    },
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(anyhow::Error::from)?;
    println!("{text}");
    Ok(())
}

/// Runs a parsed invocation.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(&cli.overrides)?;
    let paths = cfg.paths.clone();
    match cli.command {
        Command::Exif { paths } => commands::exif(&paths, std::io::stdout().lock()),
        Command::Synth { out } => print_json(&commands::synth(&cfg, &out)?),
        Command::Train { manifest, out } => {
            let manifest = commands::pick_path(manifest, &paths.train_manifest, "training manifest")?;
            let out = commands::pick_path(out, &paths.checkpoint, "checkpoint directory")?;
            commands::train_cmd(&cfg, &manifest, &out)?;
            Ok(())
        }
        Command::FitGmm {
            checkpoint,
            manifest,
            out,
        } => {
            let checkpoint = commands::pick_path(checkpoint, &paths.checkpoint, "checkpoint")?;
            let manifest = commands::pick_path(manifest, &paths.train_manifest, "training manifest")?;
            let out = commands::pick_path(out, &paths.gmm, "mixture output")?;
            let (_, calibration) = commands::fit_gmm(&cfg, &checkpoint, &manifest, &out)?;
            print_json(&calibration)
        }
        Command::Score {
            checkpoint,
            gmm,
            manifest,
            out,
        } => {
            let checkpoint = commands::pick_path(checkpoint, &paths.checkpoint, "checkpoint")?;
            let gmm = commands::pick_path(gmm, &paths.gmm, "mixture file")?;
            let manifest = commands::pick_path(manifest, &paths.test_manifest, "test manifest")?;
            let out = commands::pick_path(out, &paths.scores, "scores directory")?;
            let report = commands::score(&cfg, &checkpoint, &gmm, &manifest, &out)?;
            print_json(&report.summary_json())
        }
        Command::Evaluate { scores, labels, out } => {
            let scores = match scores {
                Some(s) => s,
                None => commands::pick_path(None, &paths.scores, "scores file")?.join(commands::SCORES_FILE),
            };
            let eval = commands::evaluate(&cfg, &scores, labels.as_deref())?;
            match out {
                Some(path) => commands::write_json(&path, &eval).map_err(CliError::from),
                None => print_json(&eval),
            }
        }
        Command::Demo { out } => print_json(&commands::demo(&cfg, &out)?),
    }
}
