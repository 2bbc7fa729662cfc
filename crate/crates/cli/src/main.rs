//! `voxelpaint` command-line pipeline.

mod commands;
mod config;
mod dataset;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "voxelpaint", version, about = "3D brain MRI inpainting pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build five-mask training samples and a manifest.
    Prepare(Common),
    /// Cross-validated training with per-fold checkpoints.
    Train(Common),
    /// Inpaint and stitch full volumes.
    Infer(Common),
    /// Score predictions against ground truth.
    Evaluate(Common),
    /// Render a summary as a table.
    Report(Common),
    /// Write small synthetic scans with tumor masks.
    Synth {
        #[arg(long, default_value = "raw")]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        cases: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [32, 32, 32])]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn threads() -> usize {
    std::env::var("VOXELPAINT_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

fn resolve(common: &Common, name: &str) -> Result<config::RunConfig> {
    let mut cfg = config::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    config::echo(&cfg, name)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new().num_threads(threads()).build_global()?;
    match cli.command {
        Command::Prepare(c) => commands::prepare(&resolve(&c, "prepare")?),
        Command::Train(c) => commands::train(&resolve(&c, "train")?),
        Command::Infer(c) => commands::infer(&resolve(&c, "infer")?),
        Command::Evaluate(c) => commands::evaluate(&resolve(&c, "evaluate")?),
        Command::Report(c) => commands::report(&resolve(&c, "report")?),
        Command::Synth { out, cases, dims, seed } => {
            let dims: [usize; 3] = dims
                .try_into()
                .map_err(|d: Vec<usize>| failure::Failure::InvalidConfig(format!("--dims needs 3 values, got {}", d.len())))?;
            commands::synth(&out, cases, dims, seed)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(failure::EXIT_INVALID)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(failure::exit_code(&e))
        }
    }
}
