//! Adam with bias correction, operating on flat parameter blocks.
//!
//! The optimizer is deliberately dumb about shapes: each model matrix is
//! one flat block, and the caller passes blocks in a fixed order. State
//! stays aligned because the order never changes during a run.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    /// `block_lens` gives the flat length of each parameter block, in the
    /// order the caller will pass them to every `step`.
    pub fn new(block_lens: &[usize], config: AdamConfig) -> Result<Self> {
        if block_lens.is_empty() {
            return Err(Error::EmptyInput("adam parameter blocks"));
        }
        if !(config.lr > 0.0) || !(0.0..1.0).contains(&config.beta1)
            || !(0.0..1.0).contains(&config.beta2) || !(config.epsilon > 0.0)
        {
            return Err(Error::Config(format!(
                "invalid adam hyperparameters: {config:?}"
            )));
        }
        Ok(AdamState {
            config,
            m: block_lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: block_lens.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update: p ← p − lr · m̂ / (√v̂ + ε) with bias-corrected moments.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::dimension(
                "adam parameter blocks",
                self.m.len(),
                params.len().max(grads.len()),
            ));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, epsilon } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (b, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.len() != self.m[b].len() || g.len() != self.m[b].len() {
                return Err(Error::dimension("adam block length", self.m[b].len(), p.len()));
            }
            let (m, v) = (&mut self.m[b], &mut self.v[b]);
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
