//! `gca train`: buffered infusion training with checkpointing and resume.
//!
//! The run directory is keyed by the resolved config hash plus seed, so
//! identical invocations land in (and reproduce) the same directory. All
//! outputs are deterministic except `timing.json`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use serde::Serialize;

use gca_core::kernel::{load_checkpoint, save_checkpoint};
use gca_core::trainer::{Buffer, TrainReport, Trainer};

use crate::{cmd, CliError, ConfigArgs};

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dataset directory or manifest.json path
    #[arg(long)]
    data: PathBuf,
    /// Parent directory for the run directory
    #[arg(long)]
    out: PathBuf,
    /// Resume from this checkpoint (its buffer_<tag>.json must sit beside it)
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Total step target (overrides train_steps); a resumed run continues
    /// until this many steps have completed overall
    #[arg(long)]
    steps: Option<u64>,
}

#[derive(Serialize)]
struct Timing {
    wall_seconds: f64,
}

fn buffer_path_for(ckpt: &Path) -> Result<PathBuf, CliError> {
    let name = ckpt
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| CliError::Validation(format!("bad checkpoint path {}", ckpt.display())))?;
    let buffer_name = name
        .strip_prefix("ckpt_")
        .and_then(|rest| rest.strip_suffix(".txt"))
        .map(|tag| format!("buffer_{tag}.json"))
        .ok_or_else(|| {
            CliError::Validation(format!(
                "checkpoint name '{name}' must look like ckpt_<tag>.txt"
            ))
        })?;
    Ok(ckpt.with_file_name(buffer_name))
}

fn save_snapshot(dir: &Path, tag: &str, trainer: &Trainer) -> Result<(), CliError> {
    save_checkpoint(
        &dir.join(format!("ckpt_{tag}.txt")),
        &trainer.params,
        &trainer.opt,
        trainer.spec(),
    )
    .map_err(CliError::runtime)?;
    trainer
        .buffer
        .save(&dir.join(format!("buffer_{tag}.json")))
        .map_err(CliError::runtime)
}

pub fn run(args: TrainArgs) -> Result<(), CliError> {
    let mut rc = args.config.resolve()?;
    if let Some(steps) = args.steps {
        rc.train_steps = steps;
    }

    let manifest = if args.data.is_dir() {
        args.data.join("manifest.json")
    } else {
        args.data.clone()
    };
    if !manifest.exists() {
        return Err(CliError::Validation(format!(
            "dataset manifest not found: {}",
            manifest.display()
        )));
    }
    let dataset = gca_core::data::load_dataset(&manifest).map_err(CliError::validation)?;
    match args.config.grid_explicit() {
        Some(g) if g != dataset.resolution => {
            return Err(CliError::Validation(format!(
                "--grid {g} does not match dataset resolution {}",
                dataset.resolution
            )));
        }
        _ => rc.grid = dataset.resolution,
    }
    let train_config = rc.train_config()?;

    let mut trainer = match &args.resume {
        None => Trainer::new(&dataset, train_config).map_err(CliError::validation)?,
        Some(ckpt_path) => {
            let ckpt = load_checkpoint(ckpt_path).map_err(CliError::validation)?;
            let expect = train_config.spec().map_err(CliError::validation)?;
            if ckpt.spec != expect {
                return Err(CliError::Validation(format!(
                    "checkpoint spec (r={}, {}) differs from configured spec (r={}, {})",
                    ckpt.spec.radius(),
                    ckpt.spec.metric(),
                    train_config.spec_radius,
                    train_config.spec_metric
                )));
            }
            let buffer = Buffer::load(&buffer_path_for(ckpt_path)?).map_err(CliError::validation)?;
            Trainer::resume(ckpt.params, ckpt.opt, buffer, train_config)
                .map_err(CliError::validation)?
        }
    };

    if trainer.completed_steps() > rc.train_steps {
        return Err(CliError::Validation(format!(
            "checkpoint already at step {}, beyond target {}",
            trainer.completed_steps(),
            rc.train_steps
        )));
    }

    let run_tag = {
        let mut keyed = rc.clone();
        keyed.seed = 0;
        let mut key = serde_json::to_string(&keyed).expect("serializable config");
        if args.resume.is_some() {
            key.push_str(&format!(";resume@{}", trainer.completed_steps()));
        }
        format!("{}-s{}", &cmd::stable_hash(key.as_bytes())[..8], rc.seed)
    };
    let run_dir = args.out.join(run_tag);
    cmd::create_dir(&run_dir)?;
    rc.save(&run_dir.join("config.json"))?;

    let started = Instant::now();
    while trainer.completed_steps() < rc.train_steps {
        trainer.step(&dataset).map_err(CliError::runtime)?;
        let done = trainer.completed_steps();
        if rc.checkpoint_every > 0 && done % rc.checkpoint_every == 0 && done < rc.train_steps {
            save_snapshot(&run_dir, &format!("{done:08}"), &trainer)?;
        }
    }
    save_snapshot(&run_dir, "final", &trainer)?;

    let report = TrainReport::from_trainer(&trainer);
    cmd::write_json(&run_dir.join("training_report.json"), &report)?;
    cmd::write_json(
        &run_dir.join("timing.json"),
        &Timing {
            wall_seconds: started.elapsed().as_secs_f64(),
        },
    )?;
    println!(
        "trained {} steps (loss {} -> {}), stopping fraction {:.3}, run dir {}",
        report.steps,
        report
            .loss_per_step
            .first()
            .map_or("-".into(), |l| format!("{l:.3}")),
        report.final_loss.map_or("-".into(), |l| format!("{l:.3}")),
        report.stopping_fraction,
        run_dir.display()
    );
    Ok(())
}
