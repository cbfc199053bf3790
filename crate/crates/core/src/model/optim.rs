//! First-order optimizers over flat parameter vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    AdamW,
}

impl OptimizerKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "sgd" => Ok(Self::Sgd),
            "adamw" => Ok(Self::AdamW),
            other => Err(Error::InvalidArgument(format!(
                "unknown optimizer `{other}` (expected sgd or adamw)"
            ))),
        }
    }
}

/// Plain gradient descent: `params <- params - lr * scale * grad`. The
/// scale slot carries the task weight (1 for unweighted runs).
pub fn sgd_step(params: &mut [f64], grad: &[f64], lr: f64, scale: f64) -> Result<()> {
    if params.len() != grad.len() {
        return Err(Error::LengthMismatch {
            left: params.len(),
            right: grad.len(),
        });
    }
    for (p, g) in params.iter_mut().zip(grad) {
        *p -= lr * scale * g;
    }
    Ok(())
}

/// Decoupled-weight-decay adaptive-moment state.
#[derive(Clone, Debug)]
pub struct AdamWState {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamWState {
    pub fn new(lr: f64, weight_decay: f64, param_len: usize) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; param_len],
            v: vec![0.0; param_len],
            step: 0,
        }
    }
}

/// One AdamW update with bias-corrected moments and weight decay applied
/// directly to the parameters.
pub fn adamw_step(state: &mut AdamWState, params: &mut [f64], grad: &[f64]) -> Result<()> {
    if params.len() != grad.len() || params.len() != state.m.len() {
        return Err(Error::LengthMismatch {
            left: params.len(),
            right: grad.len(),
        });
    }
    state.step += 1;
    let t = state.step as f64;
    let correction1 = 1.0 - state.beta1.powf(t);
    let correction2 = 1.0 - state.beta2.powf(t);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / correction1;
        let v_hat = state.v[i] / correction2;
        params[i] -=
            state.lr * (m_hat / (v_hat.sqrt() + state.epsilon) + state.weight_decay * params[i]);
    }
    Ok(())
}

/// Uniform driver used by the adaptation and supervised-training paths.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd { lr: f64 },
    AdamW(AdamWState),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64, param_len: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::Sgd { lr },
            OptimizerKind::AdamW => Self::AdamW(AdamWState::new(lr, weight_decay, param_len)),
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        self.step_scaled(params, grad, 1.0)
    }

    /// Update with the whole step scaled by `scale` (the task weight slot);
    /// for AdamW the moments see the raw gradient so the weight scales the
    /// normalized update rather than being normalized away.
    pub fn step_scaled(&mut self, params: &mut [f64], grad: &[f64], scale: f64) -> Result<()> {
        match self {
            Self::Sgd { lr } => sgd_step(params, grad, *lr, scale),
            Self::AdamW(state) => {
                let lr = state.lr;
                state.lr = lr * scale;
                let result = adamw_step(state, params, grad);
                state.lr = lr;
                result
            }
        }
    }
}
