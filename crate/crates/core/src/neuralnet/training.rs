//! Adam optimiser and the per-graph training loop.

use super::model::ModelParams;
use super::network::{backward, predict, total_loss};
use super::paths::PathBatch;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `theta` in place.
pub fn adam_step(
    theta: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), NnError> {
    let n = theta.len();
    for len in [grad.len(), state.m.len(), state.v.len()] {
        if len != n {
            return Err(NnError::LengthMismatch {
                expected: n,
                actual: len,
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for k in 0..n {
        let g = grad[k];
        state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g;
        state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[k] / bc1;
        let v_hat = state.v[k] / bc2;
        theta[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// A labelled, already tokenised graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub batch: PathBatch,
    pub label: usize,
}

/// Model parameters together with their optimiser state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub params: ModelParams,
    pub adam: AdamState,
    pub config: AdamConfig,
}

impl Trainer {
    pub fn new(params: ModelParams, config: AdamConfig) -> Self {
        let adam = AdamState::new(params.param_count());
        Trainer {
            params,
            adam,
            config,
        }
    }

    /// One Adam step on a single graph; returns the loss before the step.
    pub fn step(&mut self, ex: &Example) -> Result<f64, NnError> {
        let (loss, grad) = backward(&ex.batch, ex.label, &self.params)?;
        let mut theta = self.params.flatten();
        adam_step(&mut theta, &grad, &mut self.adam, &self.config)?;
        self.params.set_flat(&theta)?;
        Ok(loss)
    }

    /// One pass over `data` in order, one step per graph; returns mean loss.
    pub fn epoch(&mut self, data: &[Example]) -> Result<f64, NnError> {
        if data.is_empty() {
            return Ok(0.0);
        }
        let mut sum = 0.0;
        for ex in data {
            sum += self.step(ex)?;
        }
        Ok(sum / data.len() as f64)
    }

    pub fn mean_loss(&self, data: &[Example]) -> Result<f64, NnError> {
        mean_loss(&self.params, data)
    }
}

pub fn mean_loss(params: &ModelParams, data: &[Example]) -> Result<f64, NnError> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for ex in data {
        sum += total_loss(&ex.batch, ex.label, params)?;
    }
    Ok(sum / data.len() as f64)
}

/// Fraction of `data` whose predicted family equals the label.
pub fn accuracy(params: &ModelParams, data: &[Example]) -> Result<f64, NnError> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for ex in data {
        if predict(&ex.batch, params)? == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
