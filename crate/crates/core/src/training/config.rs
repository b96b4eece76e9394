use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup_steps: u64,
    pub warmup_init_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub label_smoothing: f64,
    /// Upper bound on `sentences × longest sentence` per micro-batch.
    pub batch_tokens: usize,
    pub accumulation_steps: usize,
    /// CE-only steps. For plain supervised training the two phases simply add up.
    pub phase1_steps: u64,
    /// CE + α·KD steps.
    pub phase2_steps: u64,
    /// Stop after this many passes over the data even if steps remain; 0 disables.
    pub max_epochs: u64,
    pub seed: u64,
    /// Steps between log records; 0 disables.
    pub log_interval: u64,
    /// Steps between intermediate checkpoints; 0 keeps only the final one.
    pub checkpoint_interval: u64,
}

impl TrainConfig {
    /// Desk-scale defaults for the synthetic tasks.
    pub fn toy() -> Self {
        Self {
            lr: 3e-3,
            warmup_steps: 100,
            warmup_init_lr: 1e-7,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-6,
            clip_norm: 1.0,
            label_smoothing: 0.1,
            batch_tokens: 400,
            accumulation_steps: 1,
            phase1_steps: 500,
            phase2_steps: 2000,
            max_epochs: 0,
            seed: 1,
            log_interval: 100,
            checkpoint_interval: 0,
        }
    }

    /// Full-scale optimization settings.
    pub fn paper() -> Self {
        Self {
            lr: 1e-4,
            warmup_steps: 40_000,
            warmup_init_lr: 1e-7,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-6,
            clip_norm: 1.0,
            label_smoothing: 0.1,
            batch_tokens: 1000,
            accumulation_steps: 9,
            phase1_steps: 150_000,
            phase2_steps: 756_000,
            max_epochs: 0,
            seed: 1,
            log_interval: 100,
            checkpoint_interval: 10_000,
        }
    }

    pub fn total_steps(&self) -> u64 {
        self.phase1_steps + self.phase2_steps
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) || !(self.warmup_init_lr >= 0.0) {
            return bad("lr must be positive and warmup_init_lr nonnegative".into());
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} {b} outside (0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0) || !(self.clip_norm > 0.0) {
            return bad("adam_eps and clip_norm must be positive".into());
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return bad(format!("label_smoothing {} outside [0, 0.5)", self.label_smoothing));
        }
        if self.batch_tokens == 0 || self.accumulation_steps == 0 {
            return bad("batch_tokens and accumulation_steps must be positive".into());
        }
        Ok(())
    }
}

/// Linear warmup from `warmup_init_lr` to `lr`, then inverse-sqrt decay.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    let step = step.max(1);
    let w = cfg.warmup_steps;
    if w == 0 {
        return cfg.lr;
    }
    if step <= w {
        cfg.warmup_init_lr + (cfg.lr - cfg.warmup_init_lr) * step as f64 / w as f64
    } else {
        cfg.lr * (w as f64 / step as f64).sqrt()
    }
}
