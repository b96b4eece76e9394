use std::collections::BTreeMap;

use super::config::TrainConfig;
use crate::error::{Error, Result};

/// Adam moments keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Adam {
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
    /// Number of updates applied so far.
    pub t: u64,
}

/// One parameter with its gradient, as seen by the optimizer.
pub struct ParamSlot<'a> {
    pub name: &'a str,
    pub value: &'a mut [f64],
    pub grad: &'a [f64],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// Norm of the gradient actually fed to the moments.
    pub applied_norm: f64,
}

/// Factor that brings a gradient of norm `norm` within `clip`.
pub fn clip_factor(norm: f64, clip: f64) -> f64 {
    if norm > clip {
        clip / norm
    } else {
        1.0
    }
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    /// Clips the full gradient vector to `clip_norm`, then applies a
    /// bias-corrected Adam update at learning rate `lr`.
    pub fn step(&mut self, slots: &mut [ParamSlot<'_>], lr: f64, cfg: &TrainConfig) -> Result<StepStats> {
        let mut sq = 0.0;
        for s in slots.iter() {
            if s.value.len() != s.grad.len() {
                return Err(Error::Training(format!(
                    "gradient for {} has {} entries, parameter has {}",
                    s.name,
                    s.grad.len(),
                    s.value.len()
                )));
            }
            if let Some(i) = s.grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite gradient {} at {}[{i}] (step {})",
                    s.grad[i],
                    s.name,
                    self.t + 1
                )));
            }
            sq += s.grad.iter().map(|g| g * g).sum::<f64>();
        }
        let grad_norm = sq.sqrt();
        let c = clip_factor(grad_norm, cfg.clip_norm);
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let bc1 = 1.0 - b1.powf(self.t as f64);
        let bc2 = 1.0 - b2.powf(self.t as f64);
        let mut applied = 0.0;
        for s in slots.iter_mut() {
            let m = self.m.entry(s.name.to_string()).or_insert_with(|| vec![0.0; s.value.len()]);
            let v = self.v.entry(s.name.to_string()).or_insert_with(|| vec![0.0; s.value.len()]);
            for i in 0..s.value.len() {
                let g = s.grad[i] * c;
                applied += g * g;
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                s.value[i] -= lr * mhat / (vhat.sqrt() + cfg.adam_eps);
            }
        }
        Ok(StepStats {
            grad_norm,
            applied_norm: applied.sqrt(),
        })
    }
}
