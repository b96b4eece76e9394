//! Cross-entropy, word-level distillation, and their weighted total.
//!
//! All losses sum over target positions. Callers average over sentences.

use std::fmt;
use std::str::FromStr;

use distillmt_autodiff::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::data::TokenId;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaMode {
    Fixed,
    Trainable,
}

impl fmt::Display for AlphaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlphaMode::Fixed => "fixed",
            AlphaMode::Trainable => "trainable",
        })
    }
}

impl FromStr for AlphaMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(AlphaMode::Fixed),
            "trainable" => Ok(AlphaMode::Trainable),
            _ => Err(Error::Config(format!("unknown alpha_mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub alpha_mode: AlphaMode,
    pub alpha_init: f64,
    pub label_smoothing: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            alpha_mode: AlphaMode::Fixed,
            alpha_init: 1.0,
            label_smoothing: 0.1,
        }
    }
}

impl DistillConfig {
    /// Fixed mode accepts α = 0, which turns distillation off.
    pub fn validate(&self) -> Result<()> {
        let a = self.alpha_init;
        let ok = match self.alpha_mode {
            AlphaMode::Fixed => a.is_finite() && a >= 0.0,
            AlphaMode::Trainable => a.is_finite() && a > 0.0,
        };
        if !ok {
            return Err(Error::Config(format!("alpha_init {a} invalid for {} mode", self.alpha_mode)));
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return Err(Error::Config(format!("label_smoothing {} outside [0, 0.5)", self.label_smoothing)));
        }
        Ok(())
    }

    /// Raw parameter value whose effective α is `alpha_init`.
    pub fn initial_alpha_param(&self) -> f64 {
        match self.alpha_mode {
            AlphaMode::Fixed => self.alpha_init,
            AlphaMode::Trainable => inverse_softplus(self.alpha_init),
        }
    }

    /// α that multiplies the KD term for a given raw parameter.
    pub fn effective_alpha(&self, alpha_param: f64) -> f64 {
        match self.alpha_mode {
            AlphaMode::Fixed => alpha_param,
            AlphaMode::Trainable => distillmt_autodiff::softplus(alpha_param),
        }
    }
}

fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub ce: f64,
    pub kd: f64,
    pub alpha: f64,
    pub total: f64,
}

/// Smoothed one-hot targets, flattened row-major, negated so that
/// `weighted_sum(log_probs, w)` is the loss.
pub fn ce_weights(gold: &[TokenId], vocab: usize, label_smoothing: f64) -> Result<Vec<f64>> {
    if let Some(&bad) = gold.iter().find(|&&g| g as usize >= vocab) {
        return Err(Error::Vocabulary(format!("gold id {bad} outside vocabulary of {vocab}")));
    }
    if label_smoothing > 0.0 && vocab < 2 {
        return Err(Error::Contract("label smoothing needs at least two classes".into()));
    }
    let off = if label_smoothing > 0.0 { -label_smoothing / (vocab - 1) as f64 } else { 0.0 };
    let mut w = vec![off; gold.len() * vocab];
    for (j, &g) in gold.iter().enumerate() {
        w[j * vocab + g as usize] = -(1.0 - label_smoothing);
    }
    Ok(w)
}

/// Negated teacher probabilities, after checking each row is a distribution.
pub fn kd_weights(teacher_probs: &Tensor) -> Result<Vec<f64>> {
    let k = teacher_probs.cols();
    for (j, row) in teacher_probs.data().chunks_exact(k).enumerate() {
        if let Some(q) = row.iter().find(|q| !(**q >= 0.0)) {
            return Err(Error::Distribution(format!("teacher row {j} has entry {q}")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::Distribution(format!("teacher row {j} sums to {s}")));
        }
    }
    Ok(teacher_probs.data().iter().map(|q| -q).collect())
}

fn check_rows(tape: &Tape, log_probs: Var, rows: usize) -> Result<usize> {
    let t = tape.value(log_probs);
    if t.ndim() != 2 || t.rows() != rows {
        return Err(Error::Contract(format!(
            "logits of shape {:?} do not align with {rows} target positions",
            t.shape()
        )));
    }
    Ok(t.cols())
}

/// CE from already-normalized log-probabilities.
pub fn ce_from_log_probs(tape: &mut Tape, log_probs: Var, gold: &[TokenId], label_smoothing: f64) -> Result<Var> {
    let k = check_rows(tape, log_probs, gold.len())?;
    let w = ce_weights(gold, k, label_smoothing)?;
    Ok(tape.weighted_sum(log_probs, w)?)
}

/// KD from already-normalized log-probabilities.
pub fn kd_from_log_probs(tape: &mut Tape, log_probs: Var, teacher_probs: &Tensor) -> Result<Var> {
    let k = check_rows(tape, log_probs, teacher_probs.rows())?;
    if teacher_probs.cols() != k {
        return Err(Error::Contract(format!(
            "teacher has {} classes, student {k}",
            teacher_probs.cols()
        )));
    }
    let w = kd_weights(teacher_probs)?;
    Ok(tape.weighted_sum(log_probs, w)?)
}

/// `−Σ_j Σ_z target_jz · log softmax(logits_j)_z` with the (optionally
/// smoothed) one-hot target.
pub fn ce_loss(tape: &mut Tape, logits: Var, gold: &[TokenId], label_smoothing: f64) -> Result<Var> {
    let lp = tape.log_softmax(logits);
    ce_from_log_probs(tape, lp, gold, label_smoothing)
}

/// `−Σ_j Σ_z q_jz · log softmax(logits_j)_z`. The teacher distribution `q`
/// enters as a constant.
pub fn kd_loss(tape: &mut Tape, logits: Var, teacher_probs: &Tensor) -> Result<Var> {
    let lp = tape.log_softmax(logits);
    kd_from_log_probs(tape, lp, teacher_probs)
}

/// `ce + α·kd`. In trainable mode α = softplus(alpha_param) and the parameter
/// receives gradient; in fixed mode α is the parameter's value, held constant.
pub fn total_loss(tape: &mut Tape, ce: Var, kd: Var, alpha_param: Var, cfg: &DistillConfig) -> Result<(Var, LossBundle)> {
    let raw = tape
        .value(alpha_param)
        .item()
        .ok_or_else(|| Error::Contract("alpha parameter must be a scalar".into()))?;
    let alpha = cfg.effective_alpha(raw);
    let weighted = match cfg.alpha_mode {
        AlphaMode::Fixed => tape.scale(kd, alpha),
        AlphaMode::Trainable => {
            let a = tape.softplus(alpha_param);
            tape.mul(a, kd)?
        }
    };
    let total = tape.add(ce, weighted)?;
    let value = |v: Var, tape: &Tape| tape.value(v).data()[0];
    let bundle = LossBundle {
        ce: value(ce, tape),
        kd: value(kd, tape),
        alpha,
        total: value(total, tape),
    };
    Ok((total, bundle))
}
