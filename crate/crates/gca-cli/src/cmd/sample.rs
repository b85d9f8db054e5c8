//! `gca sample`: generation chains from single seed cells.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use gca_core::chains::{dump_chain, run_sampling_chain};
use gca_core::grid::{Cell, State};
use gca_core::kernel::load_checkpoint;
use gca_core::rng;

use crate::{cmd, CliError, ConfigArgs};

#[derive(Args)]
pub struct SampleArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Trained checkpoint
    #[arg(long)]
    ckpt: PathBuf,
    /// Number of chains
    #[arg(long, default_value_t = 4)]
    count: usize,
    /// Seed cell as `x,y,z` (default: grid center)
    #[arg(long, value_delimiter = ',')]
    seed_cell: Option<Vec<i32>>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct ChainSummary {
    index: usize,
    steps: usize,
    died: bool,
    final_occupied: usize,
    final_flip_fraction: f64,
}

#[derive(Serialize)]
struct SampleSummary {
    count: usize,
    steps_t: usize,
    seed: u64,
    chains: Vec<ChainSummary>,
}

pub fn run(args: SampleArgs) -> Result<(), CliError> {
    let mut rc = args.config.resolve()?;
    let ckpt = load_checkpoint(&args.ckpt).map_err(CliError::validation)?;
    let (radius_flag, metric_flag) = args.config.spec_explicit();
    if radius_flag.is_some_and(|r| r != ckpt.spec.radius())
        || metric_flag.is_some_and(|m| m != ckpt.spec.metric().to_string())
    {
        return Err(CliError::Validation(format!(
            "checkpoint was trained with spec r={} {}, which the flags contradict",
            ckpt.spec.radius(),
            ckpt.spec.metric()
        )));
    }
    rc.radius = ckpt.spec.radius();
    rc.metric = ckpt.spec.metric().to_string();

    let seed_cell = match &args.seed_cell {
        None => cmd::center_cell(rc.grid),
        Some(v) if v.len() == 3 => Cell::new(v[0], v[1], v[2]),
        Some(v) => {
            return Err(CliError::Validation(format!(
                "--seed-cell needs three comma-separated integers, got {v:?}"
            )))
        }
    };
    let s0 = State::single(seed_cell, rc.grid).map_err(CliError::validation)?;

    cmd::create_dir(&args.out)?;
    rc.save(&args.out.join("config.json"))?;
    let finals_dir = args.out.join("finals");
    cmd::create_dir(&finals_dir)?;

    let mut chains = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let mut chain_rng = rng::stream(rc.seed, "sample", i as u64);
        let chain = run_sampling_chain(&ckpt.params, &s0, rc.steps_t, &ckpt.spec, &mut chain_rng)
            .map_err(CliError::runtime)?;
        dump_chain(&chain, &ckpt.spec, rc.seed, &args.out.join(format!("sample_{i:02}")))
            .map_err(CliError::runtime)?;
        let final_state = chain.last_state();
        final_state
            .save(&finals_dir.join(format!("shape_{i:04}.txt")))
            .map_err(CliError::runtime)?;
        let last = chain.stats.last().expect("non-empty chain");
        chains.push(ChainSummary {
            index: i,
            steps: chain.steps(),
            died: chain.died,
            final_occupied: final_state.len(),
            final_flip_fraction: if final_state.is_empty() {
                1.0
            } else {
                last.flipped_from_prev as f64 / final_state.len() as f64
            },
        });
    }
    let summary = SampleSummary {
        count: args.count,
        steps_t: rc.steps_t,
        seed: rc.seed,
        chains,
    };
    cmd::write_json(&args.out.join("summary.json"), &summary)?;
    let alive = summary.chains.iter().filter(|c| !c.died).count();
    println!(
        "sampled {} chains of T={} ({} alive) into {}",
        args.count,
        rc.steps_t,
        alive,
        args.out.display()
    );
    Ok(())
}
