//! `gca`: generative cellular automata over sparse voxel grids.
//!
//! Subcommands: `gen-data`, `train`, `sample`, `complete`, `eval`, `verify`,
//! `stats`. Every command is a pure function of (config, input files, seed);
//! reruns produce byte-identical outputs, except the wall-clock `timing.json`
//! each run directory carries for convenience.
//!
//! Exit codes: 0 success, 2 validation error, 3 runtime/numeric error.

mod cmd;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }

    pub fn validation(e: impl std::fmt::Display) -> Self {
        CliError::Validation(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "gca",
    about = "Shape generation and completion with a learned cellular-automaton transition kernel",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic shape dataset (shape files + manifest.json)
    GenData(cmd::gen_data::GenDataArgs),
    /// Train a transition kernel on a dataset
    Train(cmd::train::TrainArgs),
    /// Sample generation chains from single seed cells
    Sample(cmd::sample::SampleArgs),
    /// Complete partial shapes with k chains each
    Complete(cmd::complete::CompleteArgs),
    /// Evaluate generated shapes against a reference set
    Eval(cmd::eval::EvalArgs),
    /// Run a verification suite (gradcheck, oracle, metrics-oracle, equivariance)
    Verify(cmd::verify::VerifyArgs),
    /// Search-space statistics of a dumped chain
    Stats(cmd::stats::StatsArgs),
}

/// Config layering flags shared by train/sample/complete.
#[derive(Args, Clone, Default)]
pub struct ConfigArgs {
    /// Named preset (paper-generation, paper-completion), applied below the
    /// config file and flags
    #[arg(long)]
    preset: Option<String>,
    /// JSON config file with flat keys; flags override file values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    grid: Option<u32>,
    #[arg(long)]
    radius: Option<u32>,
    /// Distance metric: l1 or linf
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    infusion_speed: Option<f64>,
    /// Sampling-chain length T
    #[arg(long)]
    steps_t: Option<usize>,
    /// Extra training transitions after a chain first covers 95%
    #[arg(long)]
    extra_steps: Option<usize>,
    /// Per-chain transition cap during training
    #[arg(long)]
    t_max: Option<usize>,
    #[arg(long)]
    buffer_budget: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    lr_decay_every: Option<u64>,
    #[arg(long)]
    lr_decay_factor: Option<f64>,
    /// Conv channel widths, comma-separated, starting at 1 (e.g. 1,8,16,16,8)
    #[arg(long, value_delimiter = ',')]
    channels: Option<Vec<usize>>,
    /// Conv kernel radius (L-infinity taps)
    #[arg(long)]
    kernel_radius: Option<u32>,
    /// Total training steps
    #[arg(long)]
    train_steps: Option<u64>,
    /// Checkpoint cadence in steps (0 = final only)
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Task mode: generation or completion
    #[arg(long)]
    mode: Option<String>,
}

impl ConfigArgs {
    fn overlay(&self) -> config::PartialConfig {
        config::PartialConfig {
            grid: self.grid,
            radius: self.radius,
            metric: self.metric.clone(),
            infusion_speed: self.infusion_speed,
            steps_t: self.steps_t,
            extra_steps: self.extra_steps,
            t_max: self.t_max,
            buffer_budget: self.buffer_budget,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            lr_decay_every: self.lr_decay_every,
            lr_decay_factor: self.lr_decay_factor,
            channels: self.channels.clone(),
            kernel_radius: self.kernel_radius,
            train_steps: self.train_steps,
            checkpoint_every: self.checkpoint_every,
            seed: self.seed,
            mode: self.mode.clone(),
        }
    }

    /// Defaults → preset → config file → flags → GCA_SEED fallback.
    pub fn resolve(&self) -> Result<config::RunConfig, CliError> {
        let mut rc = config::RunConfig::default();
        if let Some(name) = &self.preset {
            rc.apply(&config::preset(name)?);
        }
        let mut seed_explicit = self.seed.is_some();
        if let Some(path) = &self.config {
            let file = config::load_config_file(path)?;
            seed_explicit |= file.seed.is_some();
            rc.apply(&file);
        }
        rc.apply(&self.overlay());
        if !seed_explicit {
            if let Some(seed) = config::env_seed_fallback() {
                rc.seed = seed;
            }
        }
        Ok(rc)
    }

    pub fn grid_explicit(&self) -> Option<u32> {
        self.grid
    }

    pub fn spec_explicit(&self) -> (Option<u32>, Option<String>) {
        (self.radius, self.metric.clone())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => cmd::gen_data::run(args),
        Command::Train(args) => cmd::train::run(args),
        Command::Sample(args) => cmd::sample::run(args),
        Command::Complete(args) => cmd::complete::run(args),
        Command::Eval(args) => cmd::eval::run(args),
        Command::Verify(args) => cmd::verify::run(args),
        Command::Stats(args) => cmd::stats::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
