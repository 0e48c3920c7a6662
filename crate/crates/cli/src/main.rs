//! `docalign` — run the topical-alignment pipeline stage by stage.
//!
//! Usage: `docalign <stage> --config <file> [--out <dir>] [--seed N]`
//! where stage is one of ingest, preprocess, train, predict, metrics,
//! align, stats, or all.

use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;
use docalign_core::pipeline::{self, RunConfig, Stage};

#[derive(Parser)]
#[command(
    name = "docalign",
    about = "Measure the topical alignment between Q&A corpora and official documentation",
    version
)]
struct Cli {
    /// Pipeline stage to run: ingest, preprocess, train, predict, metrics,
    /// align, stats, or all.
    stage: String,
    /// Run configuration file (JSON or TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the configured training seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let stage: Stage = cli.stage.parse().map_err(anyhow::Error::msg)?;
    let mut cfg = RunConfig::from_path(&cli.config)
        .with_context(|| format!("loading config {}", cli.config.display()))?;
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    pipeline::run(stage, &cfg)?;
    eprintln!(
        "{stage} complete; artifacts under {}",
        cfg.out_dir.display()
    );
    Ok(())
}
