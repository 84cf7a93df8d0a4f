//! Command-line pipeline: synthesize or ingest corpora, cluster, train,
//! generate, simulate channels and evaluate against a reference.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod io;

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::PipelineConfig;

#[derive(Debug, Parser)]
#[command(name = "gesture-channel", version, about = "Gesture-conditioned mmWave channel pipeline")]
pub struct Cli {
    /// TOML configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads. Every stage currently runs on one.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize keypoints, MPC records and truth sidecars from the configured scripts.
    SynthData,
    /// Resample keypoints onto the snapshot grid and convert MPC records to points.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
    },
    /// Track points into trajectories and label them by body part.
    Cluster {
        #[arg(long)]
        input: PathBuf,
    },
    /// Train the count model and the per-part point generators.
    Train {
        #[arg(long)]
        input: PathBuf,
    },
    /// Generate labeled points for each keypoint sequence.
    Generate {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Synthesize channel taps, delay profiles, delay spread and spectrograms.
    Simulate {
        #[arg(long)]
        input: PathBuf,
        /// Point file inside each sequence directory.
        #[arg(long, default_value = io::LABELED)]
        points: String,
    },
    /// Compare generated points and channels with a reference corpus.
    Evaluate {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value = io::GENERATED)]
        generated_points: String,
        #[arg(long, default_value = io::TRUTH_POINTS)]
        truth_points: String,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        bail!("--threads must be at least 1");
    }
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let ctx = Context { cfg, out: cli.out };
    match &cli.command {
        Command::SynthData => commands::synth_data(&ctx),
        Command::Preprocess { input } => commands::preprocess(&ctx, input),
        Command::Cluster { input } => commands::cluster(&ctx, input),
        Command::Train { input } => commands::train_models(&ctx, input),
        Command::Generate { models, input } => commands::generate(&ctx, models, input),
        Command::Simulate { input, points } => commands::simulate(&ctx, input, points),
        Command::Evaluate { generated, truth, generated_points, truth_points } => {
            commands::evaluate(&ctx, generated, truth, generated_points, truth_points).map(|_| ())
        }
    }
}
