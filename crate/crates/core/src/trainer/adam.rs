use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for a list of parameter arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub steps: u64,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            steps: 0,
        }
    }
}

/// One bias-corrected Adam update with decoupled weight decay.
///
/// Arrays flagged in `decay` are first shrunk by `lr * weight_decay * p`;
/// then every element moves by `lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step(
    params: &mut [&mut Vec<f64>],
    grads: &[Vec<f64>],
    decay: &[bool],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
    config: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != decay.len() || params.len() != state.m.len() {
        return Err(contract!(
            "adam_step: {} params, {} grads, {} decay flags, {} state slots",
            params.len(),
            grads.len(),
            decay.len(),
            state.m.len()
        ));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[k].len() {
            return Err(contract!("adam_step: array {k} has {} values and {} grads", p.len(), g.len()));
        }
    }
    state.steps += 1;
    let t = state.steps as f64;
    let correction1 = 1.0 - libm::pow(config.beta1, t);
    let correction2 = 1.0 - libm::pow(config.beta2, t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        let shrink = if decay[k] { lr * weight_decay } else { 0.0 };
        for i in 0..p.len() {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            if shrink != 0.0 {
                p[i] -= shrink * p[i];
            }
            p[i] -= lr * m_hat / (libm::sqrt(v_hat) + config.eps);
        }
    }
    Ok(())
}
