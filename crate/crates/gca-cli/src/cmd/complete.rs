//! `gca complete`: k completion chains per partial input shape.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use gca_core::chains::{dump_chain, run_sampling_chain};
use gca_core::kernel::load_checkpoint;
use gca_core::rng;

use crate::{cmd, CliError, ConfigArgs};

#[derive(Args)]
pub struct CompleteArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Trained checkpoint
    #[arg(long)]
    ckpt: PathBuf,
    /// Completions per partial
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Partial shape files (gca-shape v1)
    #[arg(required = true)]
    partials: Vec<PathBuf>,
}

#[derive(Serialize)]
struct CompletionSummary {
    partial: String,
    completions: usize,
    died: usize,
    final_occupied: Vec<usize>,
}

pub fn run(args: CompleteArgs) -> Result<(), CliError> {
    if args.k == 0 {
        return Err(CliError::Validation("k must be positive".into()));
    }
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
    rc.mode = "completion".into();

    let partials: Vec<_> = args
        .partials
        .iter()
        .map(|p| cmd::load_nonempty_shape(p).map(|s| (p.clone(), s)))
        .collect::<Result<_, _>>()?;
    let resolution = partials[0].1.resolution();
    for (path, s) in &partials {
        if s.resolution() != resolution {
            return Err(CliError::Validation(format!(
                "{}: resolution {} differs from {} of the first partial",
                path.display(),
                s.resolution(),
                resolution
            )));
        }
    }
    rc.grid = resolution;

    cmd::create_dir(&args.out)?;
    rc.save(&args.out.join("config.json"))?;

    let mut summaries = Vec::with_capacity(partials.len());
    for (i, (path, partial)) in partials.iter().enumerate() {
        let dir = args.out.join(format!("partial_{i:02}"));
        cmd::create_dir(&dir)?;
        partial
            .save(&dir.join("partial.txt"))
            .map_err(CliError::runtime)?;
        let partial_seed = rng::derive_seed(rc.seed, "partial", i as u64);
        let mut died = 0;
        let mut final_occupied = Vec::with_capacity(args.k);
        for j in 0..args.k {
            let mut chain_rng = rng::stream(partial_seed, "completion", j as u64);
            let chain =
                run_sampling_chain(&ckpt.params, partial, rc.steps_t, &ckpt.spec, &mut chain_rng)
                    .map_err(CliError::runtime)?;
            dump_chain(&chain, &ckpt.spec, rc.seed, &dir.join(format!("chain_{j:02}")))
                .map_err(CliError::runtime)?;
            chain
                .last_state()
                .save(&dir.join(format!("completion_{j:02}.txt")))
                .map_err(CliError::runtime)?;
            died += usize::from(chain.died);
            final_occupied.push(chain.last_state().len());
        }
        summaries.push(CompletionSummary {
            partial: path.display().to_string(),
            completions: args.k,
            died,
            final_occupied,
        });
    }
    cmd::write_json(&args.out.join("summary.json"), &summaries)?;
    println!(
        "completed {} partials x {} chains (T={}) into {}",
        partials.len(),
        args.k,
        rc.steps_t,
        args.out.display()
    );
    Ok(())
}
