//! Adaptive moment estimation with global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use super::nn::ParamSet;
use super::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm threshold applied before the moment update.
    pub clip: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: 100.0,
        }
    }
}

/// Moment accumulators for one parameter group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub group: String,
    pub config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl OptimizerState {
    pub fn new(group: impl Into<String>, params: &ParamSet, config: AdamConfig) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.rows(), t.cols()))
                .collect::<Vec<_>>()
        };
        Self {
            group: group.into(),
            config,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// Global norm before clipping.
    pub grad_norm: f64,
    /// Factor the gradients were multiplied by (1 when unclipped).
    pub clip_scale: f64,
}

/// One clipped Adam update of `params` in place.
pub fn optimizer_step(
    params: &mut ParamSet,
    grads: &[Tensor],
    state: &mut OptimizerState,
) -> Result<StepReport> {
    if grads.len() != params.len() || state.first.len() != params.len() {
        return Err(Error::Shape(format!(
            "optimizer `{}`: {} gradients for {} parameters",
            state.group,
            grads.len(),
            params.len()
        )));
    }
    for ((name, p), g) in params.names().iter().zip(params.tensors()).zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "optimizer `{}`: gradient of `{name}` has shape {:?}, parameter {:?}",
                state.group,
                g.shape(),
                p.shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of `{name}` in parameter group `{}`",
                state.group
            )));
        }
    }
    let grad_norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    let c = state.config;
    let clip_scale = if grad_norm > c.clip {
        c.clip / grad_norm
    } else {
        1.0
    };
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    for (i, g) in grads.iter().enumerate() {
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        let p = params.tensors_mut()[i].data_mut();
        for k in 0..p.len() {
            let gk = g.data()[k] * clip_scale;
            m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
            v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
            let mhat = m[k] / bc1;
            let vhat = v[k] / bc2;
            p[k] -= c.lr * mhat / (vhat.sqrt() + c.eps);
        }
    }
    Ok(StepReport {
        grad_norm,
        clip_scale,
    })
}
