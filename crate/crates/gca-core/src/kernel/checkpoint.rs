//! The `gca-ckpt v1` checkpoint format.
//!
//! A line-oriented text document: version line, architecture, neighborhood
//! spec, step counter, then every parameter and optimizer tensor in the
//! canonical block order, one value per line with 17 significant digits so a
//! 64-bit float round-trips losslessly.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{AdamConfig, ArchDescriptor, ModelParams, OptimizerState, ParamSet};
use crate::grid::{Metric, NeighborhoodSpec};

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("checkpoint inconsistent: {0}")]
    Mismatch(String),
}

/// Everything a checkpoint restores. The Adam hyperparameters live in run
/// config, not here; the step counter drives the schedule on resume.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub opt: OptimizerState,
    pub spec: NeighborhoodSpec,
}

fn tensor_names(set: &ParamSet, prefix: &str) -> Vec<String> {
    set.blocks()
        .iter()
        .map(|(kind, idx, _)| format!("{prefix}.{kind}.{idx}"))
        .collect()
}

pub fn write_checkpoint<W: Write>(
    mut w: W,
    params: &ModelParams,
    opt: &OptimizerState,
    spec: &NeighborhoodSpec,
) -> std::io::Result<()> {
    writeln!(w, "gca-ckpt v1")?;
    write!(w, "arch {}", params.arch.kernel_radius)?;
    for c in &params.arch.channels {
        write!(w, " {c}")?;
    }
    writeln!(w)?;
    writeln!(w, "spec {} {}", spec.radius(), spec.metric())?;
    writeln!(w, "step {}", opt.step)?;
    for (set, prefix) in [(&params.tensors, "param"), (&opt.m, "m"), (&opt.v, "v")] {
        for (name, (_, _, values)) in tensor_names(set, prefix).iter().zip(set.blocks()) {
            writeln!(w, "tensor {name} {}", values.len())?;
            for v in values {
                writeln!(w, "{v:.16e}")?;
            }
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: R, path: &str) -> Result<Checkpoint, CheckpointError> {
    let reader = BufReader::new(r);
    let mut lines = reader.lines().enumerate();
    let mut next_line = || -> Result<(usize, String), CheckpointError> {
        match lines.next() {
            Some((i, Ok(l))) => Ok((i + 1, l)),
            Some((i, Err(e))) => Err(CheckpointError::Io {
                path: format!("{path} (line {})", i + 1),
                source: e,
            }),
            None => Err(CheckpointError::Parse {
                path: path.to_string(),
                line: 0,
                message: "unexpected end of file".into(),
            }),
        }
    };
    let parse_err = |line: usize, message: String| CheckpointError::Parse {
        path: path.to_string(),
        line,
        message,
    };

    let (ln, header) = next_line()?;
    if header != "gca-ckpt v1" {
        return Err(parse_err(ln, format!("expected 'gca-ckpt v1', got '{header}'")));
    }

    let (ln, arch_line) = next_line()?;
    let mut parts = arch_line.split(' ');
    if parts.next() != Some("arch") {
        return Err(parse_err(ln, "expected 'arch ...'".into()));
    }
    let kernel_radius = parts
        .next()
        .and_then(|v| v.parse::<u32>().ok())
        .ok_or_else(|| parse_err(ln, "bad kernel radius".into()))?;
    let channels = parts
        .map(|v| v.parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| parse_err(ln, format!("bad channel width: {e}")))?;
    let arch = ArchDescriptor {
        channels,
        kernel_radius,
    };
    arch.validate()
        .map_err(|e| CheckpointError::Mismatch(e.to_string()))?;

    let (ln, spec_line) = next_line()?;
    let spec = (|| {
        let mut parts = spec_line.split(' ');
        if parts.next() != Some("spec") {
            return None;
        }
        let radius = parts.next()?.parse::<u32>().ok()?;
        let metric = parts.next()?.parse::<Metric>().ok()?;
        NeighborhoodSpec::new(radius, metric).ok()
    })()
    .ok_or_else(|| parse_err(ln, format!("bad spec line '{spec_line}'")))?;

    let (ln, step_line) = next_line()?;
    let step = step_line
        .strip_prefix("step ")
        .and_then(|v| v.parse::<u64>().ok())
        .ok_or_else(|| parse_err(ln, format!("bad step line '{step_line}'")))?;

    let head_width = spec.size();
    let mut tensors = ParamSet::zeros(&arch, head_width)
        .map_err(|e| CheckpointError::Mismatch(e.to_string()))?;
    let mut m = tensors.zeros_like();
    let mut v = tensors.zeros_like();
    for (set, prefix) in [(&mut tensors, "param"), (&mut m, "m"), (&mut v, "v")] {
        let names = tensor_names(set, prefix);
        for (name, dst) in names.iter().zip(set.blocks_mut()) {
            let (ln, tensor_line) = next_line()?;
            let expect = format!("tensor {name} {}", dst.len());
            if tensor_line != expect {
                return Err(parse_err(
                    ln,
                    format!("expected '{expect}', got '{tensor_line}'"),
                ));
            }
            for value in dst.iter_mut() {
                let (ln, vline) = next_line()?;
                *value = vline
                    .parse::<f64>()
                    .map_err(|e| parse_err(ln, format!("bad float '{vline}': {e}")))?;
            }
        }
    }
    if let Some((i, Ok(l))) = lines.next() {
        if !l.is_empty() {
            return Err(parse_err(i + 1, format!("trailing content '{l}'")));
        }
    }

    let params = ModelParams {
        arch,
        head_width,
        tensors,
    };
    Ok(Checkpoint {
        params,
        opt: OptimizerState { m, v, step },
        spec,
    })
}

pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    opt: &OptimizerState,
    spec: &NeighborhoodSpec,
) -> Result<(), CheckpointError> {
    let file = std::fs::File::create(path).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    write_checkpoint(BufWriter::new(file), params, opt, spec).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let file = std::fs::File::open(path).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    read_checkpoint(file, &path.display().to_string())
}

// AdamConfig is deliberately not serialized here; it is part of run config.
// This assertion documents the dependency for readers of the format.
const _: fn() = || {
    let _ = AdamConfig::default;
};
