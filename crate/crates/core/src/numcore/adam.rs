//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use super::MlpParams;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
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

/// In-place update of one parameter slice. `t` is the step number after increment.
fn update_slice(cfg: &AdamConfig, t: u64, p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]) {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..p.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Adam moments for a network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: MlpParams,
    pub v: MlpParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &MlpParams, config: AdamConfig) -> Self {
        Self {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    /// Applies one descent step. Nothing is modified if any gradient entry is
    /// non-finite.
    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpParams) -> Result<()> {
        if !params.same_shape(grads) || !params.same_shape(&self.m) {
            return Err(Error::Config("adam: parameter/gradient shape mismatch".into()));
        }
        if let Some(k) = grads.first_non_finite_layer() {
            return Err(Error::Training(format!("non-finite gradient in layer {k}")));
        }
        self.step += 1;
        let t = self.step;
        for (((p, g), m), v) in params
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.m.layers.iter_mut())
            .zip(self.v.layers.iter_mut())
        {
            update_slice(&self.config, t, &mut p.weight, &g.weight, &mut m.weight, &mut v.weight);
            update_slice(&self.config, t, &mut p.bias, &g.bias, &mut m.bias, &mut v.bias);
        }
        Ok(())
    }
}

/// Adam moments for a flat parameter vector (e.g. a policy's log-std).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamVec {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamVec {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Config("adam: vector length mismatch".into()));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training("non-finite gradient in vector parameter".into()));
        }
        self.step += 1;
        update_slice(&self.config, self.step, params, grads, &mut self.m, &mut self.v);
        Ok(())
    }
}

/// Functional form: returns updated parameters and state.
pub fn adam_step(
    mut state: AdamState,
    mut params: MlpParams,
    grads: &MlpParams,
) -> Result<(MlpParams, AdamState)> {
    state.step(&mut params, grads)?;
    Ok((params, state))
}
