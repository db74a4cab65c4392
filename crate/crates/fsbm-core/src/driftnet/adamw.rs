//! AdamW with decoupled weight decay, operating on the network's flat
//! parameter views so the moment buffers never need to know layer shapes.

use serde::{Deserialize, Serialize};

use crate::driftnet::network::{DriftNetwork, NetParams};
use crate::error::{Error, Result};

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Domain(format!("learning rate must be positive, got {}", self.lr)));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Domain(format!("{name} must lie in [0, 1), got {beta}")));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::Domain(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Domain(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// First/second moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamW {
    config: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, net: &DriftNetwork) -> Result<Self> {
        config.validate()?;
        let shapes: Vec<usize> = net.params().flat().iter().map(|s| s.len()).collect();
        Ok(AdamW {
            config,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        })
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Overrides the learning rate (for schedules) without touching moments.
    pub fn set_lr(&mut self, lr: f64) -> Result<()> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::Domain(format!("learning rate must be positive, got {lr}")));
        }
        self.config.lr = lr;
        Ok(())
    }

    /// One decoupled-weight-decay Adam update:
    ///
    /// m ← β₁m + (1−β₁)g,  v ← β₂v + (1−β₂)g²,
    /// w ← w − lr·m̂/(√v̂ + ε) − lr·λ·w   with bias-corrected m̂, v̂.
    pub fn step(&mut self, net: &mut DriftNetwork, grads: &NetParams) -> Result<()> {
        let gflat = grads.flat();
        let mut wflat = net.params_mut().flat_mut();
        if gflat.len() != self.m.len()
            || gflat
                .iter()
                .zip(self.m.iter())
                .any(|(g, m)| g.len() != m.len())
        {
            return Err(Error::Shape("gradient shapes do not match optimizer state".into()));
        }
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for ((w, g), (m, v)) in wflat
            .iter_mut()
            .zip(gflat.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            adamw_update_slice(w, g, m, v, c, bc1, bc2);
        }
        Ok(())
    }
}

/// Core element-wise AdamW update on one parameter tensor.
pub(crate) fn adamw_update_slice(
    w: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    c: &AdamWConfig,
    bias_corr1: f64,
    bias_corr2: f64,
) {
    for i in 0..w.len() {
        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
        let m_hat = m[i] / bias_corr1;
        let v_hat = v[i] / bias_corr2;
        w[i] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
        w[i] -= c.lr * c.weight_decay * w[i];
    }
}
