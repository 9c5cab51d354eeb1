use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{HamNetParams, PARAM_NAMES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &HamNetParams) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// Bias-corrected Adam update, in place. `grads[i]` belongs to the i-th
/// parameter tensor.
pub fn adam_step(
    params: &mut HamNetParams,
    grads: &[Option<&[f64]>],
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<()> {
    let tensors = params.tensors_mut();
    if grads.len() != tensors.len() {
        return Err(Error::InvalidState(format!(
            "{} gradients for {} parameters",
            grads.len(),
            tensors.len()
        )));
    }
    for (i, (g, t)) in grads.iter().zip(tensors.iter()).enumerate() {
        match g {
            None => return Err(Error::InvalidState(format!("missing gradient for {}", PARAM_NAMES[i]))),
            Some(g) if g.len() != t.len() => {
                return Err(Error::InvalidState(format!(
                    "gradient for {} has {} values, parameter has {}",
                    PARAM_NAMES[i],
                    g.len(),
                    t.len()
                )))
            }
            _ => {}
        }
    }
    state.step += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (i, t) in tensors.iter_mut().enumerate() {
        let g = grads[i].expect("checked");
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, p) in t.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *p -= config.learning_rate * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}
