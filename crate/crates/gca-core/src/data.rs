//! Desk-scale synthetic shape families and dataset persistence.
//!
//! Four surface-style families (hollow shells, never filled volumes) stand in
//! for large mesh datasets: `ring`, `box_shell`, `cross`, `ell`. Every
//! generated shape is face-connected, so it is partially connected to any of
//! its own single cells under every `r >= 1` spec, and its occupied fraction
//! stays inside `[0.5%, 10%]` of the grid volume. Each record carries 2–4
//! named parts that exactly partition the cells; completion partials are
//! unions of proper part subsets.
//!
//! A separate two-component probe family (`generate_two_part_family`) breaks
//! the connectivity contract on purpose: its island sits farther than the
//! training radius from the body, to probe bridge behavior.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Cell, GridError, State};
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("grid resolution must be at least {minimum}, got {given}")]
    InvalidResolution { given: u32, minimum: u32 },
    #[error("record needs at least 2 parts for partial construction")]
    NoParts,
    #[error("all input points identical; map to a single center cell explicitly")]
    DegenerateInput,
    #[error("point list must be non-empty")]
    EmptyInput,
    #[error("island gap {gap} does not fit resolution {resolution}")]
    GapTooLarge { gap: u32, resolution: u32 },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: resolution {found} does not match manifest resolution {expected}")]
    ResolutionMismatch {
        path: String,
        expected: u32,
        found: u32,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A named subset of a shape's cells, stored as indices into the state's
/// canonical cell order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Part {
    pub name: String,
    pub cell_indices: Vec<usize>,
}

/// One dataset shape: its state, class label, and the part partition used to
/// build completion partials.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeRecord {
    pub state: State,
    pub label: String,
    /// Sorted by name; disjoint; union covers every cell.
    pub parts: Vec<Part>,
}

impl ShapeRecord {
    /// Cells of one part as a State.
    pub fn part_state(&self, part: &Part) -> State {
        let cells: Vec<Cell> = part
            .cell_indices
            .iter()
            .map(|&i| self.state.cells()[i])
            .collect();
        State::new(cells, self.state.resolution()).expect("part indices valid")
    }

    fn validate_parts(&self) -> Result<(), String> {
        let n = self.state.len();
        let mut seen = vec![false; n];
        for part in &self.parts {
            if part.cell_indices.is_empty() {
                return Err(format!("part '{}' is empty", part.name));
            }
            for &i in &part.cell_indices {
                if i >= n {
                    return Err(format!("part '{}' index {i} out of range", part.name));
                }
                if seen[i] {
                    return Err(format!("part '{}' overlaps another part", part.name));
                }
                seen[i] = true;
            }
        }
        if seen.iter().all(|&s| s) {
            Ok(())
        } else {
            Err("parts do not cover every cell".into())
        }
    }
}

/// The synthetic families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    BoxShell,
    Ring,
    Cross,
    Ell,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Family::BoxShell => "box_shell",
            Family::Ring => "ring",
            Family::Cross => "cross",
            Family::Ell => "ell",
        };
        write!(f, "{name}")
    }
}

impl std::str::FromStr for Family {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "box_shell" => Ok(Family::BoxShell),
            "ring" => Ok(Family::Ring),
            "cross" => Ok(Family::Cross),
            "ell" => Ok(Family::Ell),
            other => Err(format!(
                "unknown family '{other}' (expected box_shell, ring, cross, ell)"
            )),
        }
    }
}

const MIN_RESOLUTION: u32 = 8;
const MIN_FRACTION: f64 = 0.005;
const MAX_FRACTION: f64 = 0.10;

/// Shell/tube thickness scales with resolution so the occupied fraction keeps
/// up with the cubic volume.
fn thickness(d: u32) -> i32 {
    (d / 16).max(1) as i32
}

fn round_frac(d: u32, f: f64) -> i32 {
    (f64::from(d) * f).round() as i32
}

/// Axes of the plane perpendicular to `normal`, in ascending order.
fn plane_axes(normal: usize) -> (usize, usize) {
    match normal {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

fn cell_from_axes(coords: [i32; 3]) -> Cell {
    Cell::new(coords[0], coords[1], coords[2])
}

struct RawShape {
    cells_by_part: Vec<(String, Vec<Cell>)>,
}

impl RawShape {
    fn total_cells(&self) -> usize {
        self.cells_by_part.iter().map(|(_, c)| c.len()).sum()
    }

    fn into_record(self, d: u32, label: String) -> ShapeRecord {
        let mut all: Vec<Cell> = self
            .cells_by_part
            .iter()
            .flat_map(|(_, c)| c.iter().copied())
            .collect();
        all.sort_unstable();
        all.dedup();
        let state = State::new(all, d).expect("generator keeps cells in bounds");
        let mut parts: Vec<Part> = self
            .cells_by_part
            .into_iter()
            .map(|(name, cells)| {
                let mut cell_indices: Vec<usize> = cells
                    .iter()
                    .map(|c| state.cells().binary_search(c).expect("own cell"))
                    .collect();
                cell_indices.sort_unstable();
                cell_indices.dedup();
                Part { name, cell_indices }
            })
            .collect();
        parts.sort_by(|a, b| a.name.cmp(&b.name));
        let record = ShapeRecord {
            state,
            label,
            parts,
        };
        debug_assert!(record.validate_parts().is_ok());
        record
    }
}

fn gen_ring(d: u32, rng: &mut Rng) -> RawShape {
    let t = thickness(d);
    let lo = round_frac(d, 0.45).max(2 * t + 1);
    let hi = (d as i32 - 2).max(lo);
    let w = rng.gen_range(lo..=hi);
    let h = rng.gen_range(lo..=hi);
    let normal = rng.gen_range(0..3usize);
    let (ua, va) = plane_axes(normal);
    let mut origin = [0i32; 3];
    origin[ua] = rng.gen_range(0..=(d as i32 - w));
    origin[va] = rng.gen_range(0..=(d as i32 - h));
    origin[normal] = rng.gen_range(0..=(d as i32 - t));

    let mut parts: Vec<(String, Vec<Cell>)> = ["bottom", "left", "right", "top"]
        .iter()
        .map(|n| (n.to_string(), Vec::new()))
        .collect();
    for u in 0..w {
        for v in 0..h {
            let on_frame = u < t || u >= w - t || v < t || v >= h - t;
            if !on_frame {
                continue;
            }
            let slot = if v < t {
                0 // bottom
            } else if v >= h - t {
                3 // top
            } else if u < t {
                1 // left
            } else {
                2 // right
            };
            for n in 0..t {
                let mut coords = origin;
                coords[ua] += u;
                coords[va] += v;
                coords[normal] += n;
                parts[slot].1.push(cell_from_axes(coords));
            }
        }
    }
    RawShape {
        cells_by_part: parts,
    }
}

fn gen_box_shell(d: u32, rng: &mut Rng) -> RawShape {
    let lo = round_frac(d, 0.35).max(3);
    let hi = round_frac(d, 0.56).max(lo.max(4));
    let ext: Vec<i32> = (0..3).map(|_| rng.gen_range(lo..=hi)).collect();
    let origin: Vec<i32> = ext
        .iter()
        .map(|&e| rng.gen_range(0..=(d as i32 - e)))
        .collect();

    let mut parts: Vec<(String, Vec<Cell>)> = ["bottom", "top", "x_walls", "y_walls"]
        .iter()
        .map(|n| (n.to_string(), Vec::new()))
        .collect();
    for x in 0..ext[0] {
        for y in 0..ext[1] {
            for z in 0..ext[2] {
                let on_shell = x == 0
                    || x == ext[0] - 1
                    || y == 0
                    || y == ext[1] - 1
                    || z == 0
                    || z == ext[2] - 1;
                if !on_shell {
                    continue;
                }
                let slot = if z == 0 {
                    0
                } else if z == ext[2] - 1 {
                    1
                } else if x == 0 || x == ext[0] - 1 {
                    2
                } else {
                    3
                };
                parts[slot]
                    .1
                    .push(Cell::new(origin[0] + x, origin[1] + y, origin[2] + z));
            }
        }
    }
    RawShape {
        cells_by_part: parts,
    }
}

fn gen_cross(d: u32, rng: &mut Rng) -> RawShape {
    let t = thickness(d);
    let lo = round_frac(d, 0.28).max(2);
    let hi = (d as i32 / 2 - t).max(lo);
    let half: Vec<i32> = (0..3).map(|_| rng.gen_range(lo..=hi)).collect();
    let center: Vec<i32> = half
        .iter()
        .map(|&h| rng.gen_range(h..=(d as i32 - h - t)))
        .collect();

    let bar = |axis: usize| -> Vec<Cell> {
        let mut cells = Vec::new();
        for a in -half[axis]..(half[axis] + t) {
            for b in 0..t {
                for c in 0..t {
                    let mut coords = [center[0], center[1], center[2]];
                    coords[axis] += a;
                    let (ua, va) = plane_axes(axis);
                    coords[ua] += b;
                    coords[va] += c;
                    cells.push(cell_from_axes(coords));
                }
            }
        }
        cells
    };
    let bx = bar(0);
    let in_bx: std::collections::HashSet<Cell> = bx.iter().copied().collect();
    let by: Vec<Cell> = bar(1).into_iter().filter(|c| !in_bx.contains(c)).collect();
    let in_by: std::collections::HashSet<Cell> = by.iter().copied().collect();
    let bz: Vec<Cell> = bar(2)
        .into_iter()
        .filter(|c| !in_bx.contains(c) && !in_by.contains(c))
        .collect();
    RawShape {
        cells_by_part: vec![
            ("arm_x".into(), bx),
            ("arm_y".into(), by),
            ("arm_z".into(), bz),
        ],
    }
}

fn gen_ell(d: u32, rng: &mut Rng) -> RawShape {
    let t = thickness(d);
    let lo = round_frac(d, 0.68).max(2 * t + 1);
    let hi = (d as i32 - 2).max(lo);
    let la = rng.gen_range(lo..=hi);
    let lb = rng.gen_range(lo..=hi);
    let normal = rng.gen_range(0..3usize);
    let (ua, va) = plane_axes(normal);
    let mut origin = [0i32; 3];
    origin[ua] = rng.gen_range(0..=(d as i32 - la));
    origin[va] = rng.gen_range(0..=(d as i32 - lb));
    origin[normal] = rng.gen_range(0..=(d as i32 - t));

    let mut arm_a = Vec::new();
    let mut arm_b = Vec::new();
    for u in 0..la {
        for v in 0..lb {
            let in_a = v < t;
            let in_b = u < t && v >= t;
            if !(in_a || in_b) {
                continue;
            }
            for n in 0..t {
                let mut coords = origin;
                coords[ua] += u;
                coords[va] += v;
                coords[normal] += n;
                let cell = cell_from_axes(coords);
                if in_a {
                    arm_a.push(cell);
                } else {
                    arm_b.push(cell);
                }
            }
        }
    }
    RawShape {
        cells_by_part: vec![("arm_a".into(), arm_a), ("arm_b".into(), arm_b)],
    }
}

/// Generate `count` randomized shapes of one family at resolution `d`.
pub fn generate_family(
    family: Family,
    count: usize,
    d: u32,
    rng: &mut Rng,
) -> Result<Vec<ShapeRecord>, DataError> {
    if d < MIN_RESOLUTION {
        return Err(DataError::InvalidResolution {
            given: d,
            minimum: MIN_RESOLUTION,
        });
    }
    let volume = f64::from(d).powi(3);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        // Rejection loop keeps the occupied fraction inside the contract;
        // size ranges make rejections rare.
        let mut attempts = 0;
        let raw = loop {
            let raw = match family {
                Family::Ring => gen_ring(d, rng),
                Family::BoxShell => gen_box_shell(d, rng),
                Family::Cross => gen_cross(d, rng),
                Family::Ell => gen_ell(d, rng),
            };
            let frac = raw.total_cells() as f64 / volume;
            if (MIN_FRACTION..=MAX_FRACTION).contains(&frac) {
                break raw;
            }
            attempts += 1;
            assert!(
                attempts < 256,
                "family {family} cannot satisfy the occupancy contract at D={d}"
            );
        };
        out.push(raw.into_record(d, family.to_string()));
    }
    Ok(out)
}

/// Two-component probe shapes: a ring body plus a solid square island plate
/// separated by `gap` empty cells along the ring's normal axis, so the
/// nearest body–island distance is `gap + 1` and partial connectivity fails
/// for any radius `r <= gap`.
pub fn generate_two_part_family(
    count: usize,
    d: u32,
    gap: u32,
    rng: &mut Rng,
) -> Result<Vec<ShapeRecord>, DataError> {
    if d < MIN_RESOLUTION {
        return Err(DataError::InvalidResolution {
            given: d,
            minimum: MIN_RESOLUTION,
        });
    }
    let island = 3i32;
    if gap as i32 + 1 + island >= d as i32 - 1 {
        return Err(DataError::GapTooLarge { gap, resolution: d });
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let w = rng.gen_range(7..=(d as i32 - 2).min(10));
        let h = rng.gen_range(7..=(d as i32 - 2).min(10));
        let ox = rng.gen_range(0..=(d as i32 - w));
        let oy = rng.gen_range(0..=(d as i32 - h));
        let oz = rng.gen_range(0..=(d as i32 - 2 - gap as i32 - island));

        let mut body = Vec::new();
        for u in 0..w {
            for v in 0..h {
                if u == 0 || u == w - 1 || v == 0 || v == h - 1 {
                    body.push(Cell::new(ox + u, oy + v, oz));
                }
            }
        }
        // Island plate hovers directly over the ring's bottom edge, so the
        // nearest body-island pair differs only along z: distance = gap + 1.
        let iz = oz + 1 + gap as i32;
        let ix = (ox + w / 2 - island / 2).clamp(0, d as i32 - island);
        let iy = oy.clamp(0, d as i32 - island);
        let mut isl = Vec::new();
        for u in 0..island {
            for v in 0..island {
                isl.push(Cell::new(ix + u, iy + v, iz));
            }
        }
        let raw = RawShape {
            cells_by_part: vec![("body".into(), body), ("island".into(), isl)],
        };
        out.push(raw.into_record(d, "two_part".into()));
    }
    Ok(out)
}

/// Center by bounding-box midpoint, scale uniformly so the largest extent is
/// 2, map `[-1,1] → [0, D-1]` affinely, round half-away-from-zero, dedupe.
pub fn voxelize_points(points: &[[f64; 3]], d: u32) -> Result<State, DataError> {
    if points.is_empty() {
        return Err(DataError::EmptyInput);
    }
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            min[a] = min[a].min(p[a]);
            max[a] = max[a].max(p[a]);
        }
    }
    let extent = (0..3).map(|a| max[a] - min[a]).fold(0.0f64, f64::max);
    if extent == 0.0 {
        return Err(DataError::DegenerateInput);
    }
    let mid = [
        (min[0] + max[0]) / 2.0,
        (min[1] + max[1]) / 2.0,
        (min[2] + max[2]) / 2.0,
    ];
    let scale = 2.0 / extent;
    let side = f64::from(d - 1);
    let cells: Vec<Cell> = points
        .iter()
        .map(|p| {
            let coord = |a: usize| {
                let normalized = (p[a] - mid[a]) * scale; // in [-1, 1]
                (((normalized + 1.0) / 2.0) * side).round() as i32
            };
            Cell::new(coord(0), coord(1), coord(2))
        })
        .collect();
    Ok(State::new(cells, d)?)
}

/// Union of a uniformly chosen non-empty proper subset of parts.
pub fn make_partial(record: &ShapeRecord, rng: &mut Rng) -> Result<State, DataError> {
    let p = record.parts.len();
    if p < 2 {
        return Err(DataError::NoParts);
    }
    // Masks 1 ..= 2^p - 2 are exactly the non-empty proper subsets.
    let mask: u32 = rng.gen_range(1..((1u32 << p) - 1));
    let mut cells = Vec::new();
    for (i, part) in record.parts.iter().enumerate() {
        if mask & (1 << i) != 0 {
            cells.extend(part.cell_indices.iter().map(|&j| record.state.cells()[j]));
        }
    }
    Ok(State::new(cells, record.state.resolution())?)
}

/// Generator provenance stored in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub family: String,
    pub seed: u64,
    pub params: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestShape {
    path: String,
    label: String,
    parts: BTreeMap<String, Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestDoc {
    format: String,
    resolution: u32,
    shapes: Vec<ManifestShape>,
    generator: GeneratorInfo,
}

const MANIFEST_FORMAT: &str = "gca-manifest v1";

/// An in-memory dataset with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub resolution: u32,
    pub records: Vec<ShapeRecord>,
    pub generator: GeneratorInfo,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Write shape files plus `manifest.json` into `dir`.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf, DataError> {
    let io_err = |path: &Path, e: std::io::Error| DataError::Io {
        path: path.display().to_string(),
        source: e,
    };
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut shapes = Vec::with_capacity(dataset.records.len());
    for (i, record) in dataset.records.iter().enumerate() {
        let file = format!("shape_{i:04}.txt");
        record.state.save(&dir.join(&file))?;
        let parts: BTreeMap<String, Vec<usize>> = record
            .parts
            .iter()
            .map(|p| (p.name.clone(), p.cell_indices.clone()))
            .collect();
        shapes.push(ManifestShape {
            path: file,
            label: record.label.clone(),
            parts,
        });
    }
    let doc = ManifestDoc {
        format: MANIFEST_FORMAT.to_string(),
        resolution: dataset.resolution,
        shapes,
        generator: dataset.generator.clone(),
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&doc).expect("serializable manifest");
    std::fs::write(&path, json + "\n").map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// Load a dataset from its `manifest.json`, validating every referenced file
/// and the part partitions.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset, DataError> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| DataError::Io {
        path: manifest_path.display().to_string(),
        source: e,
    })?;
    let doc: ManifestDoc = serde_json::from_str(&text).map_err(|e| DataError::Parse {
        path: manifest_path.display().to_string(),
        message: e.to_string(),
    })?;
    if doc.format != MANIFEST_FORMAT {
        return Err(DataError::Parse {
            path: manifest_path.display().to_string(),
            message: format!("expected format '{MANIFEST_FORMAT}', got '{}'", doc.format),
        });
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut records = Vec::with_capacity(doc.shapes.len());
    for shape in &doc.shapes {
        let path = dir.join(&shape.path);
        if !path.exists() {
            return Err(DataError::Parse {
                path: manifest_path.display().to_string(),
                message: format!("referenced shape file missing: {}", path.display()),
            });
        }
        let state = State::load(&path)?;
        if state.resolution() != doc.resolution {
            return Err(DataError::ResolutionMismatch {
                path: path.display().to_string(),
                expected: doc.resolution,
                found: state.resolution(),
            });
        }
        let parts: Vec<Part> = shape
            .parts
            .iter()
            .map(|(name, cell_indices)| Part {
                name: name.clone(),
                cell_indices: cell_indices.clone(),
            })
            .collect();
        let record = ShapeRecord {
            state,
            label: shape.label.clone(),
            parts,
        };
        if !record.parts.is_empty() {
            record.validate_parts().map_err(|message| DataError::Parse {
                path: path.display().to_string(),
                message,
            })?;
        }
        records.push(record);
    }
    Ok(Dataset {
        resolution: doc.resolution,
        records,
        generator: doc.generator,
    })
}
