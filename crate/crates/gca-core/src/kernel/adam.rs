//! Adam with step-count-driven learning-rate decay.

use serde::{Deserialize, Serialize};

use super::{Gradients, KernelError, ModelParams, ParamSet};

/// Optimizer hyperparameters. The learning rate halves (by `decay_factor`)
/// every `decay_every` completed steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub decay_factor: f64,
    pub decay_every: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay_factor: 0.5,
            decay_every: 10_000,
        }
    }
}

impl AdamConfig {
    /// Effective learning rate for the update that brings the counter from
    /// `completed_steps` to `completed_steps + 1`.
    pub fn lr_at(&self, completed_steps: u64) -> f64 {
        let decays = completed_steps / self.decay_every;
        self.learning_rate * self.decay_factor.powi(decays as i32)
    }
}

/// First/second-moment accumulators plus the step counter. Shapes mirror the
/// parameter tensors exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        OptimizerState {
            m: params.tensors.zeros_like(),
            v: params.tensors.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update in place. A non-finite gradient aborts the
/// step before touching any state.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    opt: &mut OptimizerState,
    cfg: &AdamConfig,
) -> Result<(), KernelError> {
    if !grads.all_finite() {
        return Err(KernelError::NonFiniteGradient);
    }
    let lr = cfg.lr_at(opt.step);
    opt.step += 1;
    let t = opt.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);

    let mut p_blocks = params.tensors.blocks_mut();
    let mut m_blocks = opt.m.blocks_mut();
    let mut v_blocks = opt.v.blocks_mut();
    for (bi, (_, _, g)) in grads.blocks().into_iter().enumerate() {
        let p = &mut p_blocks[bi];
        let m = &mut m_blocks[bi];
        let v = &mut v_blocks[bi];
        debug_assert_eq!(p.len(), g.len());
        for i in 0..g.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    debug_assert!(params.tensors.all_finite());
    Ok(())
}
