//! Sparse voxel states and neighborhood algebra.
//!
//! A [`State`] is an ordered set of occupied integer cells inside a cubic grid
//! of side `D`. All operations keep cells sorted ascending lexicographically
//! by `(x, y, z)`, so two states with equal cell sets are bit-for-bit equal
//! after serialization. A [`NeighborhoodSpec`] fixes the radius `r` and the
//! distance metric (L1 or L∞) and derives the canonical offset list used by
//! every neighborhood computation and by the kernel's output ordering.
//!
//! The module also houses the deterministic convergence oracle: iterating
//! `s ← N(s) ∩ x` from any seed partially connected to `x` reaches `x` in at
//! most `|x|` steps, which the trainer and the acceptance suite rely on.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from state construction and shape-file parsing.
#[derive(Debug, Error)]
pub enum GridError {
    #[error("cell ({x}, {y}, {z}) outside grid of resolution {resolution}")]
    OutOfBounds {
        x: i32,
        y: i32,
        z: i32,
        resolution: u32,
    },
    #[error("state requires at least one cell")]
    EmptyInput,
    #[error("neighborhood radius must be positive")]
    InvalidRadius,
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A single occupied coordinate in the integer grid.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl Cell {
    pub fn new(x: i32, y: i32, z: i32) -> Self {
        Cell { x, y, z }
    }

    /// Cell shifted by an integer offset. No bounds check.
    #[inline]
    pub fn offset(self, o: Offset) -> Cell {
        Cell {
            x: self.x + o[0],
            y: self.y + o[1],
            z: self.z + o[2],
        }
    }

    #[inline]
    pub fn in_bounds(self, resolution: u32) -> bool {
        let d = resolution as i32;
        (0..d).contains(&self.x) && (0..d).contains(&self.y) && (0..d).contains(&self.z)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// Relative displacement between cells.
pub type Offset = [i32; 3];

/// Distance metric for neighborhood membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    L1,
    Linf,
}

impl Metric {
    /// Distance between two cells under this metric.
    #[inline]
    pub fn distance(self, a: Cell, b: Cell) -> u32 {
        let dx = (a.x - b.x).unsigned_abs();
        let dy = (a.y - b.y).unsigned_abs();
        let dz = (a.z - b.z).unsigned_abs();
        match self {
            Metric::L1 => dx + dy + dz,
            Metric::Linf => dx.max(dy).max(dz),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::L1 => write!(f, "l1"),
            Metric::Linf => write!(f, "linf"),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Metric::L1),
            "linf" => Ok(Metric::Linf),
            other => Err(format!("unknown metric '{other}' (expected l1 or linf)")),
        }
    }
}

/// Radius + metric defining the neighborhood `N(·)` and the canonical offset
/// ordering shared by the kernel's per-cell output layout.
///
/// The offset list contains every `o` with `d(0, o) <= r`, sorted ascending
/// lexicographically by `(x, y, z)`. It always includes the zero offset, so
/// `N(s) ⊇ s` and an occupied cell can maintain itself across a transition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborhoodSpec {
    radius: u32,
    metric: Metric,
    #[serde(skip)]
    offsets: Vec<Offset>,
}

impl NeighborhoodSpec {
    pub fn new(radius: u32, metric: Metric) -> Result<Self, GridError> {
        if radius == 0 {
            return Err(GridError::InvalidRadius);
        }
        let mut offsets = Vec::new();
        let r = radius as i32;
        let origin = Cell::new(0, 0, 0);
        for x in -r..=r {
            for y in -r..=r {
                for z in -r..=r {
                    if metric.distance(origin, Cell::new(x, y, z)) <= radius {
                        offsets.push([x, y, z]);
                    }
                }
            }
        }
        // Triple loop emits offsets in ascending lexicographic order already.
        debug_assert!(offsets.windows(2).all(|w| w[0] < w[1]));
        Ok(NeighborhoodSpec {
            radius,
            metric,
            offsets,
        })
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    /// Canonical offset list; its length is the per-cell prediction width `N`.
    pub fn offsets(&self) -> &[Offset] {
        &self.offsets
    }

    /// `N`: number of cells in a single-cell neighborhood.
    pub fn size(&self) -> usize {
        self.offsets.len()
    }

    /// Rebuild the derived offset list after deserialization.
    pub fn rederive(radius: u32, metric: Metric) -> Result<Self, GridError> {
        Self::new(radius, metric)
    }
}

/// An ordered set of occupied cells in a cubic grid of side `resolution`.
///
/// Cells are sorted ascending lexicographically and deduplicated; this is the
/// canonical form used for equality, hashing of file contents, and the RNG
/// draw order of the chains. The empty state is representable only as an
/// explicit sentinel ([`State::empty`]) for chains that die out; normal
/// construction rejects empty input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct State {
    cells: Vec<Cell>,
    resolution: u32,
}

impl State {
    /// Canonical constructor: bounds-checks, sorts, and deduplicates.
    pub fn new(cells: Vec<Cell>, resolution: u32) -> Result<Self, GridError> {
        if cells.is_empty() {
            return Err(GridError::EmptyInput);
        }
        for &c in &cells {
            if !c.in_bounds(resolution) {
                return Err(GridError::OutOfBounds {
                    x: c.x,
                    y: c.y,
                    z: c.z,
                    resolution,
                });
            }
        }
        let mut cells = cells;
        cells.sort_unstable();
        cells.dedup();
        Ok(State { cells, resolution })
    }

    pub fn single(cell: Cell, resolution: u32) -> Result<Self, GridError> {
        Self::new(vec![cell], resolution)
    }

    /// Explicit empty sentinel. Chains treat reaching it as terminal failure.
    pub fn empty(resolution: u32) -> Self {
        State {
            cells: Vec::new(),
            resolution,
        }
    }

    /// Internal constructor for results already sorted, deduplicated, and
    /// (where required) bounds-checked by the caller.
    pub(crate) fn from_sorted_unchecked(cells: Vec<Cell>, resolution: u32) -> Self {
        debug_assert!(cells.windows(2).all(|w| w[0] < w[1]));
        State { cells, resolution }
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    #[inline]
    pub fn contains(&self, cell: Cell) -> bool {
        self.cells.binary_search(&cell).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = Cell> + '_ {
        self.cells.iter().copied()
    }

    /// Set intersection; resolutions must match.
    pub fn intersect(&self, other: &State) -> State {
        debug_assert_eq!(self.resolution, other.resolution);
        let (small, large) = if self.len() <= other.len() {
            (self, other)
        } else {
            (other, self)
        };
        let cells: Vec<Cell> = small
            .cells
            .iter()
            .copied()
            .filter(|&c| large.contains(c))
            .collect();
        State::from_sorted_unchecked(cells, self.resolution)
    }

    pub fn intersection_len(&self, other: &State) -> usize {
        let (small, large) = if self.len() <= other.len() {
            (self, other)
        } else {
            (other, self)
        };
        small.cells.iter().filter(|&&c| large.contains(c)).count()
    }

    /// Number of cells in exactly one of the two states.
    pub fn symmetric_difference_len(&self, other: &State) -> usize {
        self.len() + other.len() - 2 * self.intersection_len(other)
    }

    pub fn is_subset_of(&self, other: &State) -> bool {
        self.cells.iter().all(|&c| other.contains(c))
    }

    /// Every cell shifted by `offset`; errors if any result leaves the grid.
    pub fn translate(&self, offset: Offset) -> Result<State, GridError> {
        let cells: Vec<Cell> = self.cells.iter().map(|&c| c.offset(offset)).collect();
        for &c in &cells {
            if !c.in_bounds(self.resolution) {
                return Err(GridError::OutOfBounds {
                    x: c.x,
                    y: c.y,
                    z: c.z,
                    resolution: self.resolution,
                });
            }
        }
        // A constant shift preserves lexicographic order.
        Ok(State::from_sorted_unchecked(cells, self.resolution))
    }

    /// Serialize in the `gca-shape v1` text format.
    pub fn write_shape<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "gca-shape v1 {}", self.resolution)?;
        for c in &self.cells {
            writeln!(w, "{} {} {}", c.x, c.y, c.z)?;
        }
        Ok(())
    }

    pub fn to_shape_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_shape(&mut buf).expect("write to Vec");
        String::from_utf8(buf).expect("shape text is ascii")
    }

    /// Parse the `gca-shape v1` format. Enforces the canonical contract:
    /// strictly ascending lexicographic lines, in-bounds coordinates.
    pub fn read_shape<R: Read>(r: R, path: &str) -> Result<State, GridError> {
        let reader = BufReader::new(r);
        let mut lines = reader.lines().enumerate();
        let parse_err = |line: usize, message: String| GridError::Parse {
            path: path.to_string(),
            line,
            message,
        };

        let header = match lines.next() {
            Some((_, Ok(h))) => h,
            Some((_, Err(e))) => {
                return Err(GridError::Io {
                    path: path.to_string(),
                    source: e,
                })
            }
            None => return Err(parse_err(1, "missing header".into())),
        };
        let resolution = header
            .strip_prefix("gca-shape v1 ")
            .and_then(|d| d.parse::<u32>().ok())
            .ok_or_else(|| {
                parse_err(1, format!("expected 'gca-shape v1 <D>', got '{header}'"))
            })?;

        let mut cells = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            let line = line.map_err(|e| GridError::Io {
                path: path.to_string(),
                source: e,
            })?;
            let mut parts = line.split(' ');
            let cell = (|| {
                let x = parts.next()?.parse::<i32>().ok()?;
                let y = parts.next()?.parse::<i32>().ok()?;
                let z = parts.next()?.parse::<i32>().ok()?;
                if parts.next().is_some() {
                    return None;
                }
                Some(Cell::new(x, y, z))
            })()
            .ok_or_else(|| parse_err(lineno, format!("expected 'x y z', got '{line}'")))?;
            if !cell.in_bounds(resolution) {
                return Err(parse_err(
                    lineno,
                    format!("cell {cell} outside grid of resolution {resolution}"),
                ));
            }
            if let Some(&prev) = cells.last() {
                if prev >= cell {
                    return Err(parse_err(
                        lineno,
                        format!("cells not in strictly ascending order: {prev} then {cell}"),
                    ));
                }
            }
            cells.push(cell);
        }
        Ok(State::from_sorted_unchecked(cells, resolution))
    }

    pub fn save(&self, path: &Path) -> Result<(), GridError> {
        let file = std::fs::File::create(path).map_err(|e| GridError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        self.write_shape(std::io::BufWriter::new(file))
            .map_err(|e| GridError::Io {
                path: path.display().to_string(),
                source: e,
            })
    }

    pub fn load(path: &Path) -> Result<State, GridError> {
        let file = std::fs::File::open(path).map_err(|e| GridError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        State::read_shape(file, &path.display().to_string())
    }
}

/// Union of per-cell neighborhoods `N(s) = ⋃_{c∈s} N(c)`.
///
/// Always a superset of `s` (the zero offset is in every spec). When
/// `clamp_to_bounds` is set, cells outside `[0, D-1]³` are dropped; the
/// unclamped variant exists for set-algebra reasoning and may contain
/// out-of-grid coordinates.
pub fn neighborhood_of_state(s: &State, spec: &NeighborhoodSpec, clamp_to_bounds: bool) -> State {
    let mut cells = Vec::with_capacity(s.len() * spec.size());
    for c in s.iter() {
        for &o in spec.offsets() {
            let n = c.offset(o);
            if !clamp_to_bounds || n.in_bounds(s.resolution()) {
                cells.push(n);
            }
        }
    }
    cells.sort_unstable();
    cells.dedup();
    State::from_sorted_unchecked(cells, s.resolution())
}

/// One step of the convergence iteration: `N(s) ∩ x`.
pub fn dilate_intersect(s: &State, x: &State, spec: &NeighborhoodSpec) -> State {
    debug_assert_eq!(s.resolution(), x.resolution());
    let mut cells = Vec::new();
    for c in s.iter() {
        for &o in spec.offsets() {
            let n = c.offset(o);
            if x.contains(n) {
                cells.push(n);
            }
        }
    }
    cells.sort_unstable();
    cells.dedup();
    State::from_sorted_unchecked(cells, x.resolution())
}

/// True iff every cell of `x` is reachable from some cell of `s ∩ x` by hops
/// of length `<= r` that stay inside `x`. Breadth-first traversal over `x`
/// seeded by `s ∩ x`.
pub fn is_partially_connected(s: &State, x: &State, spec: &NeighborhoodSpec) -> bool {
    if x.is_empty() {
        return false;
    }
    let mut visited: HashSet<Cell> = HashSet::with_capacity(x.len());
    let mut frontier: Vec<Cell> = Vec::new();
    for c in s.iter() {
        if x.contains(c) && visited.insert(c) {
            frontier.push(c);
        }
    }
    if frontier.is_empty() {
        return false;
    }
    while let Some(c) = frontier.pop() {
        for &o in spec.offsets() {
            let n = c.offset(o);
            if x.contains(n) && visited.insert(n) {
                frontier.push(n);
            }
        }
    }
    visited.len() == x.len()
}

/// Iterate `s ← N(s) ∩ x` from `s0 ∩ x` and return the smallest `T'` with
/// `s = x`, or `None` if `x` is not reached within `max_t` steps.
///
/// When `s0` is partially connected to `x` the iteration is an increasing
/// sequence bounded by `x`, so it converges with `T' <= |x|`. A fixed point
/// short of `x` can never grow further and reports `None` immediately.
pub fn oracle_converge(
    s0: &State,
    x: &State,
    spec: &NeighborhoodSpec,
    max_t: usize,
) -> Option<usize> {
    let mut current = s0.intersect(x);
    if current == *x {
        return Some(0);
    }
    for t in 1..=max_t {
        let next = dilate_intersect(&current, x, spec);
        if next == *x {
            return Some(t);
        }
        if next.len() == current.len() {
            return None;
        }
        current = next;
    }
    None
}

/// `|s ∩ x| / |x|`.
pub fn coverage_fraction(s: &State, x: &State) -> f64 {
    assert!(!x.is_empty(), "coverage target must be non-empty");
    s.intersection_len(x) as f64 / x.len() as f64
}
