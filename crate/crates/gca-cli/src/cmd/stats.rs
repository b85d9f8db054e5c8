//! `gca stats`: per-step search-space fractions of a dumped chain.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use gca_core::chains::ChainDumpMeta;

use crate::CliError;

#[derive(Args)]
pub struct StatsArgs {
    /// Chain dump directory (contains chain.json)
    #[arg(long)]
    chain: PathBuf,
    /// Also write the JSON report here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct StepFractions {
    t: usize,
    occupied: usize,
    occupied_fraction: f64,
    neighborhood: usize,
    neighborhood_fraction: f64,
}

#[derive(Serialize)]
struct StatsReport {
    resolution: u32,
    steps: usize,
    died: bool,
    per_step: Vec<StepFractions>,
}

pub fn run(args: StatsArgs) -> Result<(), CliError> {
    let meta_path = args.chain.join("chain.json");
    let text = std::fs::read_to_string(&meta_path).map_err(|e| {
        CliError::Validation(format!("cannot read {}: {e}", meta_path.display()))
    })?;
    let meta: ChainDumpMeta = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("bad {}: {e}", meta_path.display())))?;
    let volume = f64::from(meta.resolution).powi(3);
    let report = StatsReport {
        resolution: meta.resolution,
        steps: meta.steps,
        died: meta.died,
        per_step: meta
            .stats
            .iter()
            .enumerate()
            .map(|(t, s)| StepFractions {
                t,
                occupied: s.occupied,
                occupied_fraction: s.occupied as f64 / volume,
                neighborhood: s.neighborhood,
                neighborhood_fraction: s.neighborhood as f64 / volume,
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&report).expect("serializable report");
    println!("{json}");
    if let Some(out) = &args.out {
        std::fs::write(out, json + "\n")
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", out.display())))?;
    }
    Ok(())
}
