//! Bias-corrected Adam updates, plus a name-keyed registry for models with
//! many parameter tensors.

use super::Tensor;
use crate::error::{Error, Result};
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Result<Self> {
        Self::with_betas(len, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(len: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if lr <= 0.0 {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0 < beta1 && beta1 < 1.0 && 0.0 < beta2 && beta2 < 1.0) {
            return Err(Error::Config(format!("betas must be in (0, 1), got {beta1}, {beta2}")));
        }
        if eps <= 0.0 {
            return Err(Error::Config(format!("eps must be positive, got {eps}")));
        }
        Ok(Self { m: vec![0.0; len], v: vec![0.0; len], step: 0, lr, beta1, beta2, eps })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update. The gradient is read from `param.grad` and
/// left intact for the caller to zero.
pub fn adam_step(param: &mut Tensor, state: &mut AdamState) -> Result<()> {
    let grad = param
        .grad
        .as_ref()
        .ok_or_else(|| Error::Contract("adam_step on a parameter without a gradient".into()))?;
    if grad.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "optimizer state holds {} entries, gradient has {}",
            state.m.len(),
            grad.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let grad = grad.clone();
    let data = param.data_mut();
    for i in 0..grad.len() {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        data[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// Per-parameter Adam states keyed by stable parameter names. BTreeMap keeps
/// iteration order deterministic across runs.
#[derive(Debug, Default)]
pub struct AdamRegistry {
    states: BTreeMap<String, AdamState>,
    pub lr: f64,
}

impl AdamRegistry {
    pub fn new(lr: f64) -> Self {
        Self { states: BTreeMap::new(), lr }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
        for st in self.states.values_mut() {
            st.lr = lr;
        }
    }

    pub fn step(&mut self, name: &str, param: &mut Tensor) -> Result<()> {
        let lr = self.lr;
        let state = match self.states.get_mut(name) {
            Some(s) => s,
            None => self
                .states
                .entry(name.to_string())
                .or_insert(AdamState::new(param.numel(), lr)?),
        };
        adam_step(param, state)
    }
}
