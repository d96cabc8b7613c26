//! Control files and the end-to-end pipelines behind the `pedqtl` binary.

pub mod control;
pub mod pipeline;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use control::{ComponentKind, ControlFile, KinshipMode, Settings, SimSettings};
pub use pipeline::{
    batch_hits, batch_level, lambda_histogram, run_batch, run_control, run_kinship, run_power, run_scan, run_settings, sim_spec,
    StageError, StageResult,
};

#[derive(Debug, Parser)]
#[command(name = "pedqtl", version, about = "Pedigree-aware multivariate QTL mapping")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// Control file with `key = value` lines.
    #[arg(long, short)]
    pub control: PathBuf,
    /// Worker threads (overrides the control file; 0 means all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Random seed (overrides the control file).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Null model, score-test genome scan, top-hit refinement and plots.
    Scan(Common),
    /// One univariate scan per trait of `batch_trait_list`, plus aggregates.
    Batch(Common),
    /// Simulation-based power study from the `[sim]` section.
    Power(Common),
    /// Export the kinship kernels.
    Kinship(Common),
}

impl Command {
    pub fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::Scan(c) => ("scan", c),
            Command::Batch(c) => ("batch", c),
            Command::Power(c) => ("power", c),
            Command::Kinship(c) => ("kinship", c),
        }
    }
}

/// Runs the parsed command line and returns the process exit code.
pub fn execute(cli: &Cli) -> i32 {
    let (name, common) = cli.command.parts();
    match run_control(name, &common.control, common.threads, common.seed) {
        Ok(dir) => {
            log::info!("outputs written to {}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("pedqtl {name}: {e}");
            e.exit_code()
        }
    }
}
