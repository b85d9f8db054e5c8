//! `gca eval`: metric suites over shape directories.
//!
//! Generation mode reads flat directories of shape files and reports
//! MMD / COV / 1-NNA. Completion mode reads the k-grouped layout written by
//! `gca complete` (`partial_XX/partial.txt` + `completion_XX.txt`) and
//! reports MMD / TMD / UHD.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;

use gca_core::metrics::{self, PointSet};
use gca_core::rng;

use crate::{cmd, CliError};

#[derive(Args)]
pub struct EvalArgs {
    /// Directory of generated shapes (flat, or k-grouped in completion mode)
    #[arg(long)]
    gen: PathBuf,
    /// Directory of reference shapes
    #[arg(long = "ref")]
    reference: PathBuf,
    /// generation or completion
    #[arg(long, default_value = "generation")]
    mode: String,
    /// Sample this many points per shape with replacement (default: all cells)
    #[arg(long)]
    sample_points: Option<usize>,
    /// Mean-center each shape's points
    #[arg(long, default_value_t = false)]
    center: bool,
    /// Seed for point sampling
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the JSON report here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct EvalReport {
    mode: String,
    gen_count: usize,
    ref_count: usize,
    partial_count: Option<usize>,
    config: EvalConfig,
    metrics: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct EvalConfig {
    sample_points: Option<usize>,
    center: bool,
    seed: u64,
}

fn load_pointsets(
    dir: &Path,
    tag: &str,
    seed: u64,
    sample_points: Option<usize>,
    center: bool,
) -> Result<Vec<PointSet>, CliError> {
    let files = cmd::shape_files(dir)?;
    files
        .iter()
        .enumerate()
        .map(|(i, path)| {
            let state = cmd::load_nonempty_shape(path)?;
            let mut point_rng = rng::stream(seed, tag, i as u64);
            metrics::voxels_to_points(
                &state,
                center,
                sample_points,
                &mut point_rng,
                path.display().to_string(),
            )
            .map_err(CliError::validation)
        })
        .collect()
}

pub fn run(args: EvalArgs) -> Result<(), CliError> {
    let report = match args.mode.as_str() {
        "generation" => eval_generation(&args)?,
        "completion" => eval_completion(&args)?,
        other => {
            return Err(CliError::Validation(format!(
                "unknown mode '{other}' (expected generation or completion)"
            )))
        }
    };
    let json = serde_json::to_string_pretty(&report).expect("serializable report");
    println!("{json}");
    if let Some(out) = &args.out {
        std::fs::write(out, json + "\n")
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", out.display())))?;
    }
    Ok(())
}

fn eval_generation(args: &EvalArgs) -> Result<EvalReport, CliError> {
    let gen = load_pointsets(&args.gen, "eval-gen", args.seed, args.sample_points, args.center)?;
    let reference = load_pointsets(
        &args.reference,
        "eval-ref",
        args.seed,
        args.sample_points,
        args.center,
    )?;
    let mut m = BTreeMap::new();
    m.insert("mmd".to_string(), metrics::mmd(&gen, &reference));
    m.insert("cov".to_string(), metrics::cov(&gen, &reference));
    m.insert("one_nna".to_string(), metrics::one_nna(&gen, &reference));
    Ok(EvalReport {
        mode: "generation".into(),
        gen_count: gen.len(),
        ref_count: reference.len(),
        partial_count: None,
        config: EvalConfig {
            sample_points: args.sample_points,
            center: args.center,
            seed: args.seed,
        },
        metrics: m,
    })
}

fn eval_completion(args: &EvalArgs) -> Result<EvalReport, CliError> {
    let mut groups: Vec<PathBuf> = std::fs::read_dir(&args.gen)
        .map_err(|e| {
            CliError::Validation(format!("cannot read directory {}: {e}", args.gen.display()))
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("partial_"))
        })
        .collect();
    groups.sort();
    if groups.is_empty() {
        return Err(CliError::Validation(format!(
            "completion mode needs partial_* subdirectories under {}",
            args.gen.display()
        )));
    }

    let mut partials = Vec::with_capacity(groups.len());
    let mut completions_per_partial = Vec::with_capacity(groups.len());
    let mut pooled = Vec::new();
    for (i, dir) in groups.iter().enumerate() {
        let partial_state = cmd::load_nonempty_shape(&dir.join("partial.txt"))?;
        let mut partial_rng = rng::stream(args.seed, "eval-partial", i as u64);
        // Partials keep raw coordinates: UHD compares against completions in
        // the same frame, so neither side is centered.
        let partial = metrics::voxels_to_points(
            &partial_state,
            false,
            args.sample_points,
            &mut partial_rng,
            dir.display().to_string(),
        )
        .map_err(CliError::validation)?;
        let mut completion_files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| {
                CliError::Validation(format!("cannot read directory {}: {e}", dir.display()))
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_file()
                    && p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("completion_") && n.ends_with(".txt"))
            })
            .collect();
        completion_files.sort();
        if completion_files.len() < 2 {
            return Err(CliError::Validation(format!(
                "{}: completion mode needs k >= 2 completions, found {}",
                dir.display(),
                completion_files.len()
            )));
        }
        let comps: Vec<PointSet> = completion_files
            .iter()
            .enumerate()
            .map(|(j, path)| {
                let state = cmd::load_nonempty_shape(path)?;
                let mut comp_rng =
                    rng::stream(args.seed, "eval-completion", (i * 10_000 + j) as u64);
                metrics::voxels_to_points(
                    &state,
                    false,
                    args.sample_points,
                    &mut comp_rng,
                    path.display().to_string(),
                )
                .map_err(CliError::validation)
            })
            .collect::<Result<_, _>>()?;
        pooled.extend(comps.iter().cloned());
        partials.push(partial);
        completions_per_partial.push(comps);
    }
    let reference = load_pointsets(
        &args.reference,
        "eval-ref",
        args.seed,
        args.sample_points,
        args.center,
    )?;

    let mut m = BTreeMap::new();
    m.insert("mmd".to_string(), metrics::mmd(&pooled, &reference));
    m.insert(
        "tmd".to_string(),
        metrics::tmd(&completions_per_partial).map_err(CliError::validation)?,
    );
    let uhd_total: f64 = partials
        .iter()
        .zip(&completions_per_partial)
        .map(|(p, comps)| metrics::uhd(p, comps))
        .sum();
    m.insert("uhd".to_string(), uhd_total / partials.len() as f64);
    Ok(EvalReport {
        mode: "completion".into(),
        gen_count: pooled.len(),
        ref_count: reference.len(),
        partial_count: Some(partials.len()),
        config: EvalConfig {
            sample_points: args.sample_points,
            center: args.center,
            seed: args.seed,
        },
        metrics: m,
    })
}
