use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, Mlp};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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

/// Adam moments for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Gradients,
    second: Gradients,
    step: u64,
}

impl AdamState {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        Self {
            config,
            first: Gradients::zeros_like(net),
            second: Gradients::zeros_like(net),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &Gradients {
        &self.first
    }

    pub fn second_moment(&self) -> &Gradients {
        &self.second
    }

    /// One bias-corrected Adam update of `params` in place.
    ///
    /// Rejects the whole update (parameters and moments untouched) when any
    /// gradient entry is non-finite.
    pub fn step(&mut self, params: &mut Mlp, grads: &Gradients) -> Result<()> {
        params.check_congruent(grads)?;
        params.check_congruent(&self.first)?;
        if let Some(layer) = grads.first_non_finite_layer() {
            return Err(Error::NonFinite(format!("gradient of layer {layer}")));
        }
        self.step += 1;
        let t = self.step;
        let cfg = self.config;
        let m: Vec<&mut f64> = moments_mut(&mut self.first);
        let v: Vec<&mut f64> = moments_mut(&mut self.second);
        let mut mv: Vec<(&mut f64, &mut f64)> = m.into_iter().zip(v).collect();
        params.for_each_param_mut(grads, |idx, p, g| {
            let (m, v) = &mut mv[idx];
            update(p, g, m, v, &cfg, t);
        });
        Ok(())
    }
}

fn moments_mut(g: &mut Gradients) -> Vec<&mut f64> {
    g.layers
        .iter_mut()
        .flat_map(|l| l.weights.as_mut_slice().iter_mut().chain(l.biases.iter_mut()))
        .collect()
}

/// Adam over a flat parameter vector (e.g. a state-independent log-std).
#[derive(Clone, Debug, PartialEq)]
pub struct VecAdam {
    pub config: AdamConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    step: u64,
}

impl VecAdam {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            first: vec![0.0; len],
            second: vec![0.0; len],
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::shape("vector adam", self.first.len(), grads.len()));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("vector gradient".into()));
        }
        self.step += 1;
        for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
            update(p, g, &mut self.first[i], &mut self.second[i], &self.config, self.step);
        }
        Ok(())
    }
}

#[inline]
fn update(p: &mut f64, g: f64, m: &mut f64, v: &mut f64, cfg: &AdamConfig, t: u64) {
    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
    let m_hat = *m / (1.0 - cfg.beta1.powi(t as i32));
    let v_hat = *v / (1.0 - cfg.beta2.powi(t as i32));
    *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
}
