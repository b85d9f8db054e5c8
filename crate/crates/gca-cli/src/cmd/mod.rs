//! Command implementations and shared plumbing.

pub mod complete;
pub mod eval;
pub mod gen_data;
pub mod sample;
pub mod stats;
pub mod train;
pub mod verify;

use std::path::{Path, PathBuf};

use gca_core::grid::{Cell, State};

use crate::CliError;

/// All `.txt` shape files directly inside `dir`, sorted by file name.
pub fn shape_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::Validation(format!("cannot read directory {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|ext| ext == "txt"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Validation(format!(
            "no .txt shape files in {}",
            dir.display()
        )));
    }
    Ok(files)
}

/// Load one shape file; parse failures are validation errors naming the file.
pub fn load_shape(path: &Path) -> Result<State, CliError> {
    State::load(path).map_err(CliError::validation)
}

/// Load a shape that must be non-empty (e.g. metrics inputs).
pub fn load_nonempty_shape(path: &Path) -> Result<State, CliError> {
    let s = load_shape(path)?;
    if s.is_empty() {
        return Err(CliError::Validation(format!(
            "{}: shape is empty",
            path.display()
        )));
    }
    Ok(s)
}

/// Grid center cell, the default generation seed: `round((D-1)/2)` per axis.
pub fn center_cell(resolution: u32) -> Cell {
    let c = ((f64::from(resolution) - 1.0) / 2.0).round() as i32;
    Cell::new(c, c, c)
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(value).expect("serializable value");
    std::fs::write(path, json + "\n")
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Stable 16-hex-digit hash of a byte string (FNV-1a folded through
/// splitmix-style avalanche); used to key run directories by config.
pub fn stable_hash(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    format!("{h:016x}")
}
