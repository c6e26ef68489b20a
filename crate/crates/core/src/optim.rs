//! Adam with bias correction and the step-decay learning-rate schedule.

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Adam hyperparameters. Defaults follow the common convention; there is
/// deliberately no weight decay, so the distillation terms remain the only
/// regularizers in play.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr0: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr0 <= 0.0 {
            return Err(Error::config(format!("lr0 must be positive: {}", self.lr0)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must be in (0,1): {b}")));
            }
        }
        if self.eps <= 0.0 {
            return Err(Error::config(format!("eps must be positive: {}", self.eps)));
        }
        Ok(())
    }
}

/// Step decay: `lr0 * (1 - decay)^floor(epoch / period)`. The decay applies
/// at epoch boundaries only.
pub fn lr_at(epoch: usize, lr0: f64, decay: f64, period: usize) -> Result<f64> {
    if period == 0 {
        return Err(Error::config(
            "lr decay period must be positive".to_string(),
        ));
    }
    if !(0.0..=1.0).contains(&decay) || decay == 0.0 {
        return Err(Error::config(format!("decay must be in (0,1]: {decay}")));
    }
    Ok(lr0 * (1.0 - decay).powi((epoch / period) as i32))
}

/// Adam optimizer state for one model. Moment tensors are created lazily on
/// the first step to mirror the parameter shapes.
#[derive(Debug)]
pub struct Adam {
    cfg: AdamConfig,
    step_count: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Adam {
            cfg,
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected update from the gradients currently accumulated in
    /// the model. Gradients are left untouched; zeroing them is the training
    /// loop's job.
    pub fn step(&mut self, model: &mut Model, lr: f64) -> Result<()> {
        if model.is_frozen() {
            return Err(Error::frozen("optimizer step on frozen model".to_string()));
        }
        let params = model.params_mut();
        if self.m.is_empty() {
            for p in &params {
                self.m.push(Tensor::zeros(p.value.shape().to_vec()));
                self.v.push(Tensor::zeros(p.value.shape().to_vec()));
            }
        }
        if self.m.len() != params.len() {
            return Err(Error::state(format!(
                "optimizer tracks {} parameters, model has {}",
                self.m.len(),
                params.len()
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            if p.value.shape() != m.shape() {
                return Err(Error::shape(format!(
                    "optimizer state {:?} vs parameter {:?}",
                    m.shape(),
                    p.value.shape()
                )));
            }
            let g = p.grad.data();
            let md = m.data_mut();
            let vd = v.data_mut();
            let pd = p.value.data_mut();
            for i in 0..g.len() {
                md[i] = self.cfg.beta1 * md[i] + (1.0 - self.cfg.beta1) * g[i];
                vd[i] = self.cfg.beta2 * vd[i] + (1.0 - self.cfg.beta2) * g[i] * g[i];
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                pd[i] -= lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}
