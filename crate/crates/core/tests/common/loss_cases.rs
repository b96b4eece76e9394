//! Randomized loss instances, shared with the workspace acceptance suite.
#![allow(dead_code)]

use distillmt_autodiff::{grad_check, Tape, Tensor};
use distillmt_core::losses::{ce_loss, kd_loss, total_loss, AlphaMode, DistillConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_CASES: &[&str] = &["ce", "ce.smoothed", "kd", "total.fixed", "total.trainable.logits", "total.trainable.alpha"];

fn logits(rng: &mut ChaCha8Rng, rows: usize, k: usize) -> Tensor {
    Tensor::new(vec![rows, k], (0..rows * k).map(|_| rng.gen_range(-4.0..4.0)).collect()).unwrap()
}

/// Random row-stochastic matrix with full support.
pub fn soft_teacher(rng: &mut ChaCha8Rng, rows: usize, k: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows * k);
    for _ in 0..rows {
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(1e-3..1.0f64).powi(3)).collect();
        let z: f64 = raw.iter().sum();
        data.extend(raw.iter().map(|r| r / z));
    }
    Tensor::new(vec![rows, k], data).unwrap()
}

fn one_hot(gold: &[u32], k: usize) -> Tensor {
    let mut data = vec![0.0; gold.len() * k];
    for (r, &g) in gold.iter().enumerate() {
        data[r * k + g as usize] = 1.0;
    }
    Tensor::new(vec![gold.len(), k], data).unwrap()
}

fn scalar_loss(f: impl FnOnce(&mut Tape, distillmt_autodiff::Var) -> distillmt_autodiff::Var, x: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let out = f(&mut tape, v);
    tape.value(out).data()[0]
}

/// `|kd(logits, onehot(gold)) − ce(logits, gold, 0)|` for one random instance.
pub fn identity_gap(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, k) = (rng.gen_range(1..6), rng.gen_range(2..12));
    let x = logits(&mut rng, rows, k);
    let gold: Vec<u32> = (0..rows).map(|_| rng.gen_range(0..k as u32)).collect();
    let q = one_hot(&gold, k);
    let kd = scalar_loss(|t, v| kd_loss(t, v, &q).unwrap(), &x);
    let ce = scalar_loss(|t, v| ce_loss(t, v, &gold, 0.0).unwrap(), &x);
    (kd - ce).abs()
}

/// `(kd(logits, q), H(q))` for a random soft teacher `q`.
pub fn gibbs_pair(seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, k) = (rng.gen_range(1..6), rng.gen_range(2..12));
    let x = logits(&mut rng, rows, k);
    let q = soft_teacher(&mut rng, rows, k);
    let kd = scalar_loss(|t, v| kd_loss(t, v, &q).unwrap(), &x);
    let entropy: f64 = q.data().iter().map(|&p| -p * p.ln()).sum();
    (kd, entropy)
}

/// Worst relative gradient error of one loss family on a random instance.
pub fn loss_grad_error(case: &str, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, k) = (rng.gen_range(1..5), rng.gen_range(2..9));
    let x = logits(&mut rng, rows, k);
    let gold: Vec<u32> = (0..rows).map(|_| rng.gen_range(0..k as u32)).collect();
    let q = soft_teacher(&mut rng, rows, k);
    let s: f64 = rng.gen_range(0.01..0.3);
    let raw_alpha: f64 = rng.gen_range(-2.0..2.0);
    let cfg = |mode| DistillConfig {
        alpha_mode: mode,
        alpha_init: 1.0,
        label_smoothing: s,
    };
    let eps = 1e-5;
    let r = match case {
        "ce" => grad_check(|t, v| Ok(ce_loss(t, v, &gold, 0.0).unwrap()), &x, eps),
        "ce.smoothed" => grad_check(|t, v| Ok(ce_loss(t, v, &gold, s).unwrap()), &x, eps),
        "kd" => grad_check(|t, v| Ok(kd_loss(t, v, &q).unwrap()), &x, eps),
        "total.fixed" | "total.trainable.logits" => {
            let mode = if case == "total.fixed" { AlphaMode::Fixed } else { AlphaMode::Trainable };
            let c = cfg(mode);
            let a = if mode == AlphaMode::Fixed { raw_alpha.abs() } else { raw_alpha };
            grad_check(
                |t, v| {
                    let ce = ce_loss(t, v, &gold, s).unwrap();
                    let kd = kd_loss(t, v, &q).unwrap();
                    let alpha = t.leaf(Tensor::scalar(a), mode == AlphaMode::Trainable);
                    Ok(total_loss(t, ce, kd, alpha, &c).unwrap().0)
                },
                &x,
                eps,
            )
        }
        "total.trainable.alpha" => {
            let c = cfg(AlphaMode::Trainable);
            grad_check(
                |t, a| {
                    let xv = t.constant(x.clone());
                    let ce = ce_loss(t, xv, &gold, s).unwrap();
                    let kd = kd_loss(t, xv, &q).unwrap();
                    Ok(total_loss(t, ce, kd, a, &c).unwrap().0)
                },
                &Tensor::scalar(raw_alpha),
                eps,
            )
        }
        other => panic!("unknown loss case {other}"),
    };
    r.unwrap()
}
