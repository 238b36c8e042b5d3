//! Adam with bias correction and the step-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(params: &[Tensor<f32>]) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|t| vec![0.0; t.len()]).collect(),
            v: params.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn check_against(&self, params: &[Tensor<f32>]) -> Result<()> {
        let ok = self.m.len() == params.len()
            && self.v.len() == params.len()
            && params
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|(p, (m, v))| m.len() == p.len() && v.len() == p.len());
        if ok {
            Ok(())
        } else {
            Err(Error::DimMismatch("optimizer state does not match the parameters".into()))
        }
    }

    /// One update with learning rate `lr`; gradients are in f64.
    pub fn update(&mut self, cfg: &AdamConfig, lr: f64, params: &mut [Tensor<f32>], grads: &[Vec<f64>]) -> Result<()> {
        self.check_against(params)?;
        if grads.len() != params.len() || grads.iter().zip(params.iter()).any(|(g, p)| g.len() != p.len()) {
            return Err(Error::DimMismatch("gradient shapes do not match the parameters".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let g = grads[i][j];
                let mj = cfg.beta1 * m[j] as f64 + (1.0 - cfg.beta1) * g;
                let vj = cfg.beta2 * v[j] as f64 + (1.0 - cfg.beta2) * g * g;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let update = lr * (mj / c1) / ((vj / c2).sqrt() + cfg.eps);
                *w = (*w as f64 - update) as f32;
            }
        }
        Ok(())
    }
}

/// Step decay: `max(lr0 * factor^floor(epoch / every), floor)`.
pub fn lr_at_epoch(lr0: f64, factor: f64, every: usize, floor: f64, epoch: usize) -> f64 {
    let k = epoch.checked_div(every).unwrap_or(0);
    (lr0 * factor.powi(k as i32)).max(floor)
}
