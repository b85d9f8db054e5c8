//! The learned transition kernel: a submanifold sparse-convolution network
//! mapping a state to per-cell neighborhood occupancy logits, with exact
//! reverse-mode gradients and Adam updates.
//!
//! Everything is 64-bit and deterministic: initialization is a pure function
//! of the seed, forward/backward are pure functions of `(params, state)`, and
//! checkpoints round-trip parameters losslessly. The network is fully
//! convolutional over the sparse sites with no absolute-coordinate features,
//! so the whole map is translation equivariant by construction.

mod adam;
mod checkpoint;
mod net;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use net::{
    aggregate, backward, forward, loss, ForwardPass, Logits, OccupancyField, LOSS_PROB_CLAMP,
};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Cell, GridError, Metric, NeighborhoodSpec};
use crate::rng;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("head emits {actual} logits but the neighborhood spec needs {expected}")]
    HeadWidthMismatch { expected: usize, actual: usize },
    #[error("forward pass requires a non-empty state")]
    EmptyState,
    #[error("loss target cell {cell} lies outside the field support")]
    TargetOutsideSupport { cell: Cell },
    #[error("occupancy field values inconsistent with support")]
    InvalidField,
    #[error("non-finite gradient; update aborted")]
    NonFiniteGradient,
}

/// Network shape: channel widths per layer plus the conv kernel radius.
///
/// `channels[0]` is the input width and must be 1 (the input feature of every
/// occupied cell is the constant 1.0). Each consecutive pair is one
/// submanifold conv layer followed by ReLU; a linear head then maps the last
/// width to the `N` logits of the prediction neighborhood. Kernel taps live
/// on the L∞ ball of `kernel_radius` (radius 1 → 3³ taps).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub channels: Vec<usize>,
    pub kernel_radius: u32,
}

impl Default for ArchDescriptor {
    fn default() -> Self {
        ArchDescriptor {
            channels: vec![1, 8, 16, 16, 8],
            kernel_radius: 1,
        }
    }
}

impl ArchDescriptor {
    pub fn validate(&self) -> Result<(), KernelError> {
        if self.channels.len() < 2 {
            return Err(KernelError::InvalidArchitecture(
                "need at least one conv layer".into(),
            ));
        }
        if self.channels[0] != 1 {
            return Err(KernelError::InvalidArchitecture(format!(
                "input width must be 1 (constant occupancy feature), got {}",
                self.channels[0]
            )));
        }
        if self.channels.contains(&0) {
            return Err(KernelError::InvalidArchitecture(
                "zero-width layer".into(),
            ));
        }
        if self.kernel_radius == 0 {
            return Err(KernelError::InvalidArchitecture(
                "kernel radius must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn conv_layer_count(&self) -> usize {
        self.channels.len() - 1
    }

    /// The conv taps: L∞ ball offsets in canonical lexicographic order.
    pub fn kernel_offsets(&self) -> Result<NeighborhoodSpec, GridError> {
        NeighborhoodSpec::new(self.kernel_radius, Metric::Linf)
    }
}

/// One submanifold convolution layer.
///
/// `weight` is `[tap][in_channel][out_channel]` flattened with the out
/// channel contiguous; `bias` has one entry per out channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// The linear head: `weight` is `[in_channel][logit]` flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// All trainable tensors. Gradients and Adam moments share this shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub convs: Vec<ConvLayer>,
    pub head: DenseLayer,
}

impl ParamSet {
    pub fn zeros(arch: &ArchDescriptor, head_width: usize) -> Result<Self, KernelError> {
        arch.validate()?;
        let taps = arch
            .kernel_offsets()
            .map_err(|e| KernelError::InvalidArchitecture(e.to_string()))?
            .size();
        let convs = arch
            .channels
            .windows(2)
            .map(|w| ConvLayer {
                weight: vec![0.0; taps * w[0] * w[1]],
                bias: vec![0.0; w[1]],
            })
            .collect();
        let last = *arch.channels.last().expect("validated");
        Ok(ParamSet {
            convs,
            head: DenseLayer {
                weight: vec![0.0; last * head_width],
                bias: vec![0.0; head_width],
            },
        })
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet {
            convs: self
                .convs
                .iter()
                .map(|l| ConvLayer {
                    weight: vec![0.0; l.weight.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
            head: DenseLayer {
                weight: vec![0.0; self.head.weight.len()],
                bias: vec![0.0; self.head.bias.len()],
            },
        }
    }

    /// Tensor blocks in the canonical visit order (convs first, weight before
    /// bias, head last). Adam and the checkpoint writer rely on this order.
    pub fn blocks(&self) -> Vec<(&'static str, usize, &[f64])> {
        let mut out = Vec::with_capacity(self.convs.len() * 2 + 2);
        for (i, l) in self.convs.iter().enumerate() {
            out.push(("conv.weight", i, l.weight.as_slice()));
            out.push(("conv.bias", i, l.bias.as_slice()));
        }
        out.push(("head.weight", 0, self.head.weight.as_slice()));
        out.push(("head.bias", 0, self.head.bias.as_slice()));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::with_capacity(self.convs.len() * 2 + 2);
        for l in &mut self.convs {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|(_, _, b)| b.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|(_, _, b)| b.iter().all(|v| v.is_finite()))
    }

    /// In-place `self += scale * other`, block by block.
    pub fn add_scaled(&mut self, other: &ParamSet, scale: f64) {
        for (dst, (_, _, src)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            debug_assert_eq!(dst.len(), src.len());
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }
}

/// Full model state: architecture plus every trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: ArchDescriptor,
    /// Number of logits the head emits; must equal the prediction
    /// neighborhood size of the spec the model is used with.
    pub head_width: usize,
    pub tensors: ParamSet,
}

/// Gradients mirror the parameter tensors exactly.
pub type Gradients = ParamSet;

/// Fan-in-scaled uniform initialization: weights from
/// `U(-sqrt(6/fan_in), +sqrt(6/fan_in))`, biases zero.
///
/// Fan-in counts every input feeding one output unit: `taps * c_in` for a
/// conv layer, `c_in` for the head. Draw order is the canonical block order,
/// flat index ascending, so the result is a pure function of the seed.
pub fn init_params(
    arch: &ArchDescriptor,
    spec: &NeighborhoodSpec,
    seed: u64,
) -> Result<ModelParams, KernelError> {
    arch.validate()?;
    let head_width = spec.size();
    let taps = arch
        .kernel_offsets()
        .map_err(|e| KernelError::InvalidArchitecture(e.to_string()))?
        .size();
    let mut tensors = ParamSet::zeros(arch, head_width)?;
    let mut rng = rng::stream(seed, "param-init", 0);
    let mut fill = |w: &mut [f64], fan_in: usize| {
        let limit = (6.0 / fan_in as f64).sqrt();
        for v in w.iter_mut() {
            *v = rng.gen_range(-limit..limit);
        }
    };
    for (l, widths) in arch.channels.windows(2).enumerate() {
        fill(&mut tensors.convs[l].weight, taps * widths[0]);
    }
    let last = *arch.channels.last().expect("validated");
    fill(&mut tensors.head.weight, last);
    Ok(ModelParams {
        arch: arch.clone(),
        head_width,
        tensors,
    })
}
