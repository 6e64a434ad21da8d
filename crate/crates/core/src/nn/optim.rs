use serde::{Deserialize, Serialize};

use super::{Grads, ParamSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment accumulators for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros = params.zeros_like().0;
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update. A non-finite gradient leaves both the
/// parameters and the state untouched and is reported as an error.
pub fn adam_step(params: &mut ParamSet, grads: &Grads, state: &mut OptimizerState) -> Result<()> {
    let aligned = grads.0.len() == params.len()
        && state.m.len() == params.len()
        && params
            .tensors
            .iter()
            .zip(&grads.0)
            .zip(&state.m)
            .all(|((p, g), m)| p.data.len() == g.len() && m.len() == g.len());
    if !aligned {
        return Err(Error::Shape("gradients do not match parameters".into()));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient; optimizer step skipped".into()));
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (k, p) in params.tensors.iter_mut().enumerate() {
        let (m, v, g) = (&mut state.m[k], &mut state.v[k], &grads.0[k]);
        for j in 0..p.data.len() {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p.data[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
