//! `motionfield` command-line tool.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 runtime error.

mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Runtime(#[from] motionfield::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Runtime(motionfield::Error::Config(_)) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "motionfield",
    version,
    about = "Flow-matching motion planning on B-spline trajectories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build an expert dataset with CMA-ES.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Fixture name or world JSON path.
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        length: Option<usize>,
    },
    /// Train a motion field on a dataset; writes a checkpoint and a loss CSV.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Generate a batch for one start/goal pair.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated start position.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        start: Vec<f64>,
        /// Comma-separated goal position.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        goal: Vec<f64>,
        /// World to plan in; defaults to the checkpoint's training world.
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        /// Also render the batch as SVG.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Benchmark `model-L<length>.ckpt` checkpoints on held-out tasks.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Directory holding the checkpoints; defaults to the config's out_dir.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long)]
        env: Option<String>,
        /// Lengths to evaluate (comma-separated).
        #[arg(long, value_delimiter = ',')]
        length: Vec<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
    },
}

fn load(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData {
            common,
            env,
            length,
        } => {
            let mut cfg = load(&common)?;
            if let Some(e) = env {
                cfg.env.name = e;
            }
            if let Some(l) = length {
                cfg.dataset.length = l;
            }
            cfg.validate()?;
            commands::gen_data(&cfg, common.out)?;
        }
        Command::Train { common, dataset } => {
            let cfg = load(&common)?;
            cfg.validate()?;
            commands::train(&cfg, &dataset, common.out)?;
        }
        Command::Sample {
            common,
            checkpoint,
            start,
            goal,
            env,
            steps,
            batch,
            svg,
        } => {
            let mut cfg = load(&common)?;
            if let Some(s) = steps {
                cfg.sample.steps = s;
            }
            if let Some(b) = batch {
                cfg.sample.batch = b;
            }
            cfg.validate()?;
            let args = commands::SampleArgs {
                checkpoint,
                start,
                goal,
                env,
                out: common.out,
                svg,
            };
            commands::sample(&cfg, args)?;
        }
        Command::Bench {
            common,
            checkpoints,
            env,
            length,
            steps,
            batch,
        } => {
            let mut cfg = load(&common)?;
            if let Some(e) = env {
                cfg.env.name = e;
            }
            if !length.is_empty() {
                cfg.bench.lengths = length;
            }
            if let Some(s) = steps {
                cfg.sample.steps = s;
            }
            if let Some(b) = batch {
                cfg.sample.batch = b;
            }
            cfg.validate()?;
            let dir = checkpoints.unwrap_or_else(|| cfg.out_dir.clone());
            commands::bench(&cfg, &dir, common.out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
