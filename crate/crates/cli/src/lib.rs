//! The `nnd` command line: dataset creation, training, sampling, oracle
//! checks and image export.
//!
//! Every subcommand reads one JSON run config (`--config`), applies
//! `--override key=value` edits at dot paths and then `--seed`, and writes
//! the fully resolved config to `resolved_config.json` in `--out` before
//! doing any work. Feeding that file back reproduces the outputs.

pub mod commands;
pub mod config;
pub mod error;
pub mod mip;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub use error::{CliError, Result, EXIT_NUMERICAL, EXIT_VALIDATION};

#[derive(Debug, Parser)]
#[command(name = "nnd", version, about = "Nonnegative 3D fields via log-space Langevin sampling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON run config; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Top-level seed, applied after overrides.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// `dot.path=value`; the value is parsed as JSON, else taken as a string.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic blob corpus and its manifest.
    MakeDataset(CommonArgs),
    /// Fit the neural denoiser to a corpus.
    Train(CommonArgs),
    /// Draw unconditional samples.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of independent runs; overrides `count`.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Draw posterior samples given a measurement.
    Invert {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Cross-check the analytic components against numerical oracles.
    OracleCheck(CommonArgs),
    /// Maximum intensity projection of a field, one PGM per channel.
    RenderMip(CommonArgs),
    /// Convert a trace JSON into CSV.
    TracePlot(CommonArgs),
}

/// `seed_path` is where `--seed` lands; `None` for subcommands without randomness.
fn prepare<T>(args: &CommonArgs, seed_path: Option<&str>, count: Option<usize>) -> Result<T>
where
    T: Serialize + DeserializeOwned + Default,
{
    let seed = match (args.seed, seed_path) {
        (Some(seed), Some(path)) => Some((seed, path)),
        (Some(_), None) => return Err(CliError::Config("this subcommand takes no --seed".into())),
        (None, _) => None,
    };
    let mut overrides = args.overrides.clone();
    if let Some(n) = count {
        overrides.push(format!("count={n}"));
    }
    let (cfg, echo) = config::resolve::<T>(args.config.as_deref(), &overrides, seed)?;
    fs::create_dir_all(&args.out).map_err(|source| CliError::Io {
        path: args.out.clone(),
        source,
    })?;
    commands::write_json(&args.out.join(commands::RESOLVED_CONFIG), &echo)?;
    Ok(cfg)
}

fn out(args: &CommonArgs) -> &Path {
    &args.out
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::MakeDataset(a) => commands::make_dataset(&prepare(a, Some("seed"), None)?, out(a)),
        Command::Train(a) => commands::train_model(&prepare(a, Some("seed"), None)?, out(a)),
        Command::Generate { common, count } => {
            commands::generate(&prepare(common, Some("run.seed"), *count)?, out(common))
        }
        Command::Invert { common, count } => {
            commands::invert(&prepare(common, Some("run.seed"), *count)?, out(common))
        }
        Command::OracleCheck(a) => {
            commands::oracle_check(&prepare(a, None, None)?, out(a)).map(|_| ())
        }
        Command::RenderMip(a) => commands::render_mip(&prepare(a, None, None)?, out(a)),
        Command::TracePlot(a) => commands::trace_plot(&prepare(a, None, None)?, out(a)),
    }
}

/// Caps the global thread pool at `NND_THREADS` when set.
pub fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("NND_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("NND_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}
