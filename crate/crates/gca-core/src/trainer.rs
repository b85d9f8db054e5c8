//! Buffered infusion training with adaptive per-chain stopping.
//!
//! The buffer holds `(state, shape, t)` tuples from many different shapes so
//! each mini-batch mixes de-correlated transitions. A training step pops `M`
//! entries, accumulates the summed Bernoulli NLL of the reachable target
//! `x ∩ N(s̃)` per entry, applies one Adam update on the summed loss, samples
//! each entry's next infusion state, and pushes survivors back. A chain that
//! first covers 95% of its shape trains for `extra_steps` more transitions
//! (teaching the kernel to hold a finished shape still), then retires and is
//! replaced by a fresh draw, so the buffer size is invariant.
//!
//! Determinism: all randomness derives from `(seed, purpose, index)` streams,
//! with the Adam step counter indexing per-step streams. Resuming from a
//! checkpoint plus a buffer snapshot therefore reproduces an uninterrupted
//! run exactly.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chains::{infusion_probs, sample_from_field, ChainError, InfusionSchedule};
use crate::data::{make_partial, DataError, Dataset};
use crate::grid::{coverage_fraction, dilate_intersect, NeighborhoodSpec, State};
use crate::kernel::{
    adam_step, init_params, AdamConfig, ArchDescriptor, ForwardPass, Gradients, KernelError,
    ModelParams, OptimizerState,
};
use crate::rng::{self, Rng};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("buffer underflow: have {have}, need {need}")]
    BufferUnderflow { have: usize, need: usize },
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },
    #[error("completion mode needs >= 2 parts; shape {shape} has {parts}")]
    CompletionNeedsParts { shape: usize, parts: usize },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// What the initial distribution `q⁰` draws: a single random cell of the
/// shape (generation) or a union of a proper part subset (completion).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainMode {
    Generation,
    Completion,
}

/// Every tunable of the training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub buffer_budget: usize,
    pub batch_size: usize,
    /// `T̂`: extra transitions trained after a chain first covers 95%.
    pub extra_steps: usize,
    /// Per-chain step cap; chains that never cover retire here.
    pub t_max: usize,
    pub infusion_speed: f64,
    pub total_steps: u64,
    pub seed: u64,
    pub mode: TrainMode,
    pub spec_radius: u32,
    pub spec_metric: crate::grid::Metric,
    pub arch: ArchDescriptor,
    pub adam: AdamConfig,
}

/// Coverage threshold of the adaptive stopping rule.
pub const STOP_COVERAGE: f64 = 0.95;

impl TrainConfig {
    pub fn spec(&self) -> Result<NeighborhoodSpec, TrainError> {
        NeighborhoodSpec::new(self.spec_radius, self.spec_metric)
            .map_err(|e| TrainError::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.buffer_budget == 0 || self.batch_size == 0 {
            return Err(TrainError::InvalidConfig(
                "buffer budget and batch size must be positive".into(),
            ));
        }
        if self.batch_size > self.buffer_budget {
            return Err(TrainError::InvalidConfig(format!(
                "batch size {} exceeds buffer budget {}",
                self.batch_size, self.buffer_budget
            )));
        }
        if self.t_max == 0 {
            return Err(TrainError::InvalidConfig("t_max must be positive".into()));
        }
        if self.infusion_speed.is_nan() || self.infusion_speed < 0.0 {
            return Err(TrainError::InvalidConfig(format!(
                "infusion speed must be non-negative, got {}",
                self.infusion_speed
            )));
        }
        self.arch
            .validate()
            .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        self.spec()?;
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            buffer_budget: 256,
            batch_size: 32,
            extra_steps: 5,
            t_max: 200,
            infusion_speed: 0.005,
            total_steps: 10_000,
            seed: 0,
            mode: TrainMode::Generation,
            spec_radius: 2,
            spec_metric: crate::grid::Metric::L1,
            arch: ArchDescriptor::default(),
            adam: AdamConfig::default(),
        }
    }
}

/// One buffered infusion-chain state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub state: State,
    pub shape_idx: usize,
    pub t: usize,
    /// Extra transitions taken since first covering 95%; absent before then.
    pub post_coverage_steps: Option<usize>,
    /// Whether the first-coverage event happened while `α < 1`.
    pub covered_before_full_rate: Option<bool>,
}

/// The training buffer plus its cyclic dataset cursor and lifetime counters
/// (all serialized, so a resumed run continues the statistics exactly).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Buffer {
    pub entries: Vec<BufferEntry>,
    next_shape: usize,
    pub chains_completed: usize,
    pub chains_met_criterion_early: usize,
    pub chains_died: usize,
}

impl Buffer {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), TrainError> {
        let json = serde_json::to_string(self).expect("serializable buffer");
        std::fs::write(path, json + "\n").map_err(|e| {
            TrainError::InvalidConfig(format!("cannot write buffer {}: {e}", path.display()))
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Buffer, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            TrainError::InvalidConfig(format!("cannot read buffer {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text).map_err(|e| {
            TrainError::InvalidConfig(format!("bad buffer snapshot {}: {e}", path.display()))
        })
    }
}

/// Draw `q⁰` for a shape.
fn draw_initial(
    dataset: &Dataset,
    shape_idx: usize,
    mode: TrainMode,
    rng: &mut Rng,
) -> Result<State, TrainError> {
    let record = &dataset.records[shape_idx];
    match mode {
        TrainMode::Generation => {
            let cell = record.state.cells()[rng.gen_range(0..record.state.len())];
            Ok(State::single(cell, record.state.resolution()).expect("cell is in bounds"))
        }
        TrainMode::Completion => Ok(make_partial(record, rng)?),
    }
}

/// Fill a fresh buffer: shapes drawn cyclically, initial states from `q⁰`.
pub fn init_buffer(
    dataset: &Dataset,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<Buffer, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if config.mode == TrainMode::Completion {
        for (i, r) in dataset.records.iter().enumerate() {
            if r.parts.len() < 2 {
                return Err(TrainError::CompletionNeedsParts {
                    shape: i,
                    parts: r.parts.len(),
                });
            }
        }
    }
    let mut entries = Vec::with_capacity(config.buffer_budget);
    for i in 0..config.buffer_budget {
        let shape_idx = i % dataset.len();
        let state = draw_initial(dataset, shape_idx, config.mode, rng)?;
        entries.push(BufferEntry {
            state,
            shape_idx,
            t: 0,
            post_coverage_steps: None,
            covered_before_full_rate: None,
        });
    }
    Ok(Buffer {
        entries,
        next_shape: config.buffer_budget % dataset.len(),
        chains_completed: 0,
        chains_met_criterion_early: 0,
        chains_died: 0,
    })
}

/// Outcome of the adaptive stopping rule for an entry holding its *next*
/// state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    /// Below coverage, under the cap: keep going.
    Continue,
    /// Covered; still inside the `extra_steps` identity-training phase.
    ExtraPhase,
    /// Finished the extra phase or hit the cap: replace with a fresh draw.
    Retire,
}

/// Classify an entry against its shape.
pub fn stopping_criterion(entry: &BufferEntry, x: &State, config: &TrainConfig) -> StopDecision {
    match entry.post_coverage_steps {
        Some(k) if k >= config.extra_steps => StopDecision::Retire,
        Some(_) => StopDecision::ExtraPhase,
        None => {
            if coverage_fraction(&entry.state, x) >= STOP_COVERAGE {
                StopDecision::ExtraPhase
            } else if entry.t >= config.t_max {
                StopDecision::Retire
            } else {
                StopDecision::Continue
            }
        }
    }
}

/// Per-step metrics surfaced to the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub loss: f64,
    /// Total support cells across the batch; `loss / support_cells` is the
    /// size-independent per-cell BCE (ln 2 at a random model).
    pub support_cells: usize,
    pub retired: usize,
    pub retired_met_early: usize,
    pub died: usize,
}

struct EntryEvaluation {
    loss: f64,
    support_cells: usize,
    grads: Gradients,
    next_state: State,
    rng: Rng,
}

/// Forward/loss/gradient plus the infusion draw for one entry. Pure given
/// `(params, entry, shape, rng)`, so the batch can fan out across threads.
fn evaluate_entry(
    params: &ModelParams,
    entry: &BufferEntry,
    x: &State,
    spec: &NeighborhoodSpec,
    sched: &InfusionSchedule,
    mut rng: Rng,
) -> Result<EntryEvaluation, TrainError> {
    let pass = ForwardPass::run(params, &entry.state, spec)?;
    let support_cells = pass.field().support().len();
    let target = dilate_intersect(&entry.state, x, spec);
    let (loss, grads) = pass.loss_and_grad(params, &target)?;
    // A chain whose neighborhood no longer touches x is unrecoverable: the
    // moment the infusion rate reaches 1 its transition target is the empty
    // state, so it dies with certainty. Retire it now (as a failed chain)
    // instead of training for up to t_max more steps on pure noise.
    let stranded = target.is_empty();
    let next_state = if stranded {
        State::empty(entry.state.resolution())
    } else {
        let probs = infusion_probs(pass.field(), x, sched.rate(entry.t));
        let field = crate::kernel::OccupancyField::with_values(
            pass.field().support().clone(),
            probs,
            pass.field().contributor_counts().to_vec(),
        )?;
        sample_from_field(&field, &mut rng)
    };
    Ok(EntryEvaluation {
        loss,
        support_cells,
        grads,
        next_state,
        rng,
    })
}

/// The training loop state.
pub struct Trainer {
    pub params: ModelParams,
    pub opt: OptimizerState,
    pub buffer: Buffer,
    config: TrainConfig,
    spec: NeighborhoodSpec,
    sched: InfusionSchedule,
    pub loss_curve: Vec<f64>,
    pub per_cell_loss_curve: Vec<f64>,
}

impl Trainer {
    pub fn new(dataset: &Dataset, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let spec = config.spec()?;
        let params = init_params(&config.arch, &spec, config.seed)?;
        let opt = OptimizerState::new(&params);
        let mut init_rng = rng::stream(config.seed, "buffer-init", 0);
        let buffer = init_buffer(dataset, &config, &mut init_rng)?;
        let sched = InfusionSchedule::linear(config.infusion_speed)?;
        Ok(Trainer {
            params,
            opt,
            buffer,
            config,
            spec,
            sched,
            loss_curve: Vec::new(),
            per_cell_loss_curve: Vec::new(),
        })
    }

    /// Rebuild a trainer mid-run from restored model, optimizer, and buffer.
    pub fn resume(
        params: ModelParams,
        opt: OptimizerState,
        buffer: Buffer,
        config: TrainConfig,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        let spec = config.spec()?;
        if params.head_width != spec.size() {
            return Err(TrainError::InvalidConfig(format!(
                "checkpoint head width {} does not match spec size {}",
                params.head_width,
                spec.size()
            )));
        }
        if params.arch != config.arch {
            return Err(TrainError::InvalidConfig(
                "checkpoint architecture differs from config".into(),
            ));
        }
        let sched = InfusionSchedule::linear(config.infusion_speed)?;
        Ok(Trainer {
            params,
            opt,
            buffer,
            config,
            spec,
            sched,
            loss_curve: Vec::new(),
            per_cell_loss_curve: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn spec(&self) -> &NeighborhoodSpec {
        &self.spec
    }

    /// Completed Adam updates; also the index of the next step's RNG stream.
    pub fn completed_steps(&self) -> u64 {
        self.opt.step
    }

    /// Evaluate the next batch without mutating anything: the summed loss,
    /// the summed gradients, and each entry's evaluation in pop order.
    fn evaluate_batch(
        &self,
        dataset: &Dataset,
    ) -> Result<(f64, Gradients, Vec<EntryEvaluation>), TrainError> {
        let m = self.config.batch_size;
        if self.buffer.len() < m {
            return Err(TrainError::BufferUnderflow {
                have: self.buffer.len(),
                need: m,
            });
        }
        let step = self.opt.step;
        let step_seed = rng::derive_seed(self.config.seed, "train-step", step);
        let batch = &self.buffer.entries[..m];
        let evals: Vec<Result<EntryEvaluation, TrainError>> = batch
            .par_iter()
            .enumerate()
            .map(|(i, entry)| {
                let rng = rng::stream(step_seed, "entry", i as u64);
                let x = &dataset.records[entry.shape_idx].state;
                evaluate_entry(&self.params, entry, x, &self.spec, &self.sched, rng)
            })
            .collect();
        let mut total_loss = 0.0;
        let mut total_grads = self.params.tensors.zeros_like();
        let mut out = Vec::with_capacity(m);
        for eval in evals {
            let eval = eval?;
            total_loss += eval.loss;
            total_grads.add_scaled(&eval.grads, 1.0);
            out.push(eval);
        }
        Ok((total_loss, total_grads, out))
    }

    /// One full training step: batch loss + Adam update + buffer rotation.
    pub fn step(&mut self, dataset: &Dataset) -> Result<StepMetrics, TrainError> {
        let step = self.opt.step;
        let (total_loss, total_grads, evals) = self.evaluate_batch(dataset)?;
        if !total_loss.is_finite() {
            let detail: Vec<String> = self
                .buffer
                .entries
                .iter()
                .zip(&evals)
                .map(|(e, ev)| format!("shape {} t {} loss {}", e.shape_idx, e.t, ev.loss))
                .collect();
            return Err(TrainError::NonFiniteLoss {
                step,
                detail: detail.join("; "),
            });
        }
        adam_step(&mut self.params, &total_grads, &mut self.opt, &self.config.adam)?;

        let m = self.config.batch_size;
        let popped: Vec<BufferEntry> = self.buffer.entries.drain(..m).collect();
        let mut metrics = StepMetrics {
            loss: total_loss,
            support_cells: evals.iter().map(|e| e.support_cells).sum(),
            retired: 0,
            retired_met_early: 0,
            died: 0,
        };
        for (entry, mut eval) in popped.into_iter().zip(evals) {
            let died = eval.next_state.is_empty();
            let mut next = BufferEntry {
                state: eval.next_state,
                shape_idx: entry.shape_idx,
                t: entry.t + 1,
                post_coverage_steps: entry.post_coverage_steps.map(|k| k + 1),
                covered_before_full_rate: entry.covered_before_full_rate,
            };
            let decision = if died {
                StopDecision::Retire
            } else {
                let x = &dataset.records[next.shape_idx].state;
                let decision = stopping_criterion(&next, x, &self.config);
                if decision == StopDecision::ExtraPhase && next.post_coverage_steps.is_none() {
                    // First-coverage event: start the counter and record
                    // whether the rate was still below 1.
                    next.post_coverage_steps = Some(0);
                    next.covered_before_full_rate = Some(self.sched.rate(next.t) < 1.0);
                }
                decision
            };
            match decision {
                StopDecision::Continue | StopDecision::ExtraPhase => {
                    self.buffer.entries.push(next);
                }
                StopDecision::Retire => {
                    metrics.retired += 1;
                    if died {
                        metrics.died += 1;
                        self.buffer.chains_died += 1;
                    }
                    self.buffer.chains_completed += 1;
                    if next.covered_before_full_rate == Some(true) {
                        metrics.retired_met_early += 1;
                        self.buffer.chains_met_criterion_early += 1;
                    }
                    let shape_idx = self.buffer.next_shape;
                    self.buffer.next_shape = (self.buffer.next_shape + 1) % dataset.len();
                    let state = draw_initial(dataset, shape_idx, self.config.mode, &mut eval.rng)?;
                    self.buffer.entries.push(BufferEntry {
                        state,
                        shape_idx,
                        t: 0,
                        post_coverage_steps: None,
                        covered_before_full_rate: None,
                    });
                }
            }
        }
        debug_assert_eq!(self.buffer.len(), self.config.buffer_budget);
        self.loss_curve.push(total_loss);
        self.per_cell_loss_curve
            .push(total_loss / metrics.support_cells.max(1) as f64);
        Ok(metrics)
    }

    /// Run `steps` training steps.
    pub fn run(&mut self, dataset: &Dataset, steps: u64) -> Result<(), TrainError> {
        for _ in 0..steps {
            self.step(dataset)?;
        }
        Ok(())
    }

    /// Fraction of retired chains whose first-coverage event happened while
    /// `α < 1`.
    pub fn stopping_fraction(&self) -> f64 {
        if self.buffer.chains_completed == 0 {
            return 0.0;
        }
        self.buffer.chains_met_criterion_early as f64 / self.buffer.chains_completed as f64
    }
}

/// Full-run report, serialized as `training_report.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: u64,
    pub final_loss: Option<f64>,
    pub loss_per_step: Vec<f64>,
    /// Batch loss divided by total support cells: comparable across steps
    /// regardless of how large the buffered states are.
    pub per_cell_loss_per_step: Vec<f64>,
    pub chains_completed: usize,
    pub chains_met_criterion_early: usize,
    pub chains_died: usize,
    pub stopping_fraction: f64,
}

impl TrainReport {
    pub fn from_trainer(t: &Trainer) -> Self {
        TrainReport {
            steps: t.completed_steps(),
            final_loss: t.loss_curve.last().copied(),
            loss_per_step: t.loss_curve.clone(),
            per_cell_loss_per_step: t.per_cell_loss_curve.clone(),
            chains_completed: t.buffer.chains_completed,
            chains_met_criterion_early: t.buffer.chains_met_criterion_early,
            chains_died: t.buffer.chains_died,
            stopping_fraction: t.stopping_fraction(),
        }
    }
}

/// Train from scratch for `config.total_steps`.
pub fn train(dataset: &Dataset, config: TrainConfig) -> Result<(Trainer, TrainReport), TrainError> {
    let mut trainer = Trainer::new(dataset, config)?;
    let steps = trainer.config.total_steps;
    trainer.run(dataset, steps)?;
    let report = TrainReport::from_trainer(&trainer);
    Ok((trainer, report))
}
