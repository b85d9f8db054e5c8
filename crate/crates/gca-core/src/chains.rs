//! Sampling chains (inference) and infusion chains (training-data emulation).
//!
//! A sampling chain repeatedly draws the next state from the kernel's
//! occupancy field; every consecutive pair satisfies `s^{t+1} ⊆ N(s^t)`. An
//! infusion chain mixes the kernel's per-cell probability with the indicator
//! of the ground-truth shape at rate `α^t = clamp(w·t, 0, 1)`, biasing the
//! chain toward the data: at `α = 0` it is the sampling chain, at `α = 1` it
//! is the deterministic convergence iteration `s ← N(s) ∩ x`.
//!
//! Cell draws consume the generator stream in canonical cell order, so chains
//! are reproducible across runs and platforms for a fixed seed.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{coverage_fraction, neighborhood_of_state, NeighborhoodSpec, State};
use crate::kernel::{ForwardPass, KernelError, ModelParams, OccupancyField};
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("infusion speed must be non-negative, got {0}")]
    InvalidSpeed(f64),
    #[error("infusion rate must lie in [0, 1], got {0}")]
    InvalidRate(f64),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Infusion rate schedule `α^t = clamp(start + w·t, 0, 1)`: nondecreasing,
/// linear in `t` with speed `w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfusionSchedule {
    speed: f64,
    start: f64,
}

impl InfusionSchedule {
    /// The standard schedule: `α^t = min(w·t, 1)`.
    pub fn linear(speed: f64) -> Result<Self, ChainError> {
        if speed.is_nan() || speed < 0.0 || speed.is_infinite() {
            return Err(ChainError::InvalidSpeed(speed));
        }
        Ok(InfusionSchedule { speed, start: 0.0 })
    }

    /// Constant rate, the saturated regime `t ≥ 1/w` of the linear schedule.
    pub fn constant(alpha: f64) -> Result<Self, ChainError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(ChainError::InvalidRate(alpha));
        }
        Ok(InfusionSchedule {
            speed: 0.0,
            start: alpha,
        })
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    pub fn rate(&self, t: usize) -> f64 {
        (self.start + self.speed * t as f64).clamp(0.0, 1.0)
    }
}

/// Per-state chain statistics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepStats {
    pub occupied: usize,
    pub neighborhood: usize,
    /// `|s^t Δ s^{t-1}|`; zero for the initial state.
    pub flipped_from_prev: usize,
}

/// A realized chain with its per-step statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub states: Vec<State>,
    pub stats: Vec<StepStats>,
    /// The chain reached the empty sentinel and stopped early.
    pub died: bool,
    /// First step whose coverage of the target reached the stop threshold
    /// (infusion chains only).
    pub first_coverage_step: Option<usize>,
}

impl Chain {
    fn new(s0: State, spec: &NeighborhoodSpec) -> Self {
        let stats = vec![StepStats {
            occupied: s0.len(),
            neighborhood: neighborhood_of_state(&s0, spec, true).len(),
            flipped_from_prev: 0,
        }];
        Chain {
            states: vec![s0],
            stats,
            died: false,
            first_coverage_step: None,
        }
    }

    fn push(&mut self, next: State, spec: &NeighborhoodSpec) {
        let prev = self.states.last().expect("chain never empty");
        self.stats.push(StepStats {
            occupied: next.len(),
            neighborhood: if next.is_empty() {
                0
            } else {
                neighborhood_of_state(&next, spec, true).len()
            },
            flipped_from_prev: next.symmetric_difference_len(prev),
        });
        if next.is_empty() {
            self.died = true;
        }
        self.states.push(next);
    }

    pub fn last_state(&self) -> &State {
        self.states.last().expect("chain never empty")
    }

    /// Number of transitions taken.
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }
}

/// Draw one state from an occupancy field: each support cell occupied
/// independently with its probability, consuming one uniform draw per cell in
/// canonical order.
pub fn sample_from_field(field: &OccupancyField, rng: &mut Rng) -> State {
    let mut cells = Vec::new();
    for (&c, &p) in field.support().cells().iter().zip(field.probs()) {
        let u: f64 = rng.gen();
        if u < p {
            cells.push(c);
        }
    }
    if cells.is_empty() {
        State::empty(field.support().resolution())
    } else {
        State::from_sorted_unchecked(cells, field.support().resolution())
    }
}

/// Per-cell Bernoulli parameters of the infusion kernel at rate `alpha`:
/// `(1-α)·p_θ(c) + α·[c ∈ x]` over the field's support.
pub fn infusion_probs(field: &OccupancyField, x: &State, alpha: f64) -> Vec<f64> {
    field
        .support()
        .cells()
        .iter()
        .zip(field.probs())
        .map(|(&c, &p)| {
            let indicator = if x.contains(c) { 1.0 } else { 0.0 };
            (1.0 - alpha) * p + alpha * indicator
        })
        .collect()
}

fn sample_probs(support: &State, probs: &[f64], rng: &mut Rng) -> State {
    let mut cells = Vec::new();
    for (&c, &p) in support.cells().iter().zip(probs) {
        let u: f64 = rng.gen();
        if u < p {
            cells.push(c);
        }
    }
    if cells.is_empty() {
        State::empty(support.resolution())
    } else {
        State::from_sorted_unchecked(cells, support.resolution())
    }
}

/// One sampling-chain transition: forward pass, aggregate, independent draws.
pub fn sample_transition(
    params: &ModelParams,
    s: &State,
    spec: &NeighborhoodSpec,
    rng: &mut Rng,
) -> Result<State, ChainError> {
    let field = ForwardPass::run(params, s, spec)?.into_field();
    Ok(sample_from_field(&field, rng))
}

/// One infusion-chain transition at time `t`.
pub fn infusion_transition(
    params: &ModelParams,
    s: &State,
    x: &State,
    t: usize,
    sched: &InfusionSchedule,
    spec: &NeighborhoodSpec,
    rng: &mut Rng,
) -> Result<State, ChainError> {
    let field = ForwardPass::run(params, s, spec)?.into_field();
    let probs = infusion_probs(&field, x, sched.rate(t));
    Ok(sample_probs(field.support(), &probs, rng))
}

/// Run `t_steps` sampling transitions from `s0`; stops early (flagged) if a
/// state dies out.
pub fn run_sampling_chain(
    params: &ModelParams,
    s0: &State,
    t_steps: usize,
    spec: &NeighborhoodSpec,
    rng: &mut Rng,
) -> Result<Chain, ChainError> {
    let mut chain = Chain::new(s0.clone(), spec);
    for _ in 0..t_steps {
        let next = sample_transition(params, chain.last_state(), spec, rng)?;
        let dead = next.is_empty();
        chain.push(next, spec);
        if dead {
            break;
        }
    }
    Ok(chain)
}

/// Run infusion transitions from `q0` until coverage of `x` reaches
/// `stop_coverage` or `t_max` transitions have been taken; records the first
/// step at which the threshold was met.
#[allow(clippy::too_many_arguments)]
pub fn run_infusion_chain(
    params: &ModelParams,
    x: &State,
    sched: &InfusionSchedule,
    spec: &NeighborhoodSpec,
    rng: &mut Rng,
    t_max: usize,
    q0: &State,
    stop_coverage: f64,
) -> Result<Chain, ChainError> {
    assert!(!x.is_empty(), "infusion target must be non-empty");
    let mut chain = Chain::new(q0.clone(), spec);
    if coverage_fraction(q0, x) >= stop_coverage {
        chain.first_coverage_step = Some(0);
        return Ok(chain);
    }
    for t in 0..t_max {
        let next = infusion_transition(params, chain.last_state(), x, t, sched, spec, rng)?;
        let dead = next.is_empty();
        let covered = !dead && coverage_fraction(&next, x) >= stop_coverage;
        chain.push(next, spec);
        if covered {
            chain.first_coverage_step = Some(t + 1);
            break;
        }
        if dead {
            break;
        }
    }
    Ok(chain)
}

/// Per-step `(occupied/D³, |N(s^t)|/D³)` fractions.
pub fn search_space_stats(chain: &Chain, resolution: u32) -> Vec<(f64, f64)> {
    let volume = f64::from(resolution).powi(3);
    chain
        .stats
        .iter()
        .map(|s| (s.occupied as f64 / volume, s.neighborhood as f64 / volume))
        .collect()
}

/// Metadata written beside the per-step shape files of a chain dump.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainDumpMeta {
    pub seed: u64,
    pub resolution: u32,
    pub spec_radius: u32,
    pub spec_metric: String,
    pub steps: usize,
    pub died: bool,
    pub first_coverage_step: Option<usize>,
    pub stats: Vec<StepStats>,
}

/// Write `step_<t>.txt` shape files plus `chain.json` into `dir`.
pub fn dump_chain(
    chain: &Chain,
    spec: &NeighborhoodSpec,
    seed: u64,
    dir: &Path,
) -> Result<(), ChainError> {
    let io_err = |path: &Path, e: std::io::Error| ChainError::Io {
        path: path.display().to_string(),
        source: e,
    };
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (t, state) in chain.states.iter().enumerate() {
        let path = dir.join(format!("step_{t}.txt"));
        state.save(&path).map_err(|e| match e {
            crate::grid::GridError::Io { path, source } => ChainError::Io { path, source },
            other => ChainError::Io {
                path: path.display().to_string(),
                source: std::io::Error::other(other.to_string()),
            },
        })?;
    }
    let meta = ChainDumpMeta {
        seed,
        resolution: chain.states[0].resolution(),
        spec_radius: spec.radius(),
        spec_metric: spec.metric().to_string(),
        steps: chain.steps(),
        died: chain.died,
        first_coverage_step: chain.first_coverage_step,
        stats: chain.stats.clone(),
    };
    let path = dir.join("chain.json");
    let json = serde_json::to_string_pretty(&meta).expect("serializable meta");
    std::fs::write(&path, json + "\n").map_err(|e| io_err(&path, e))
}
