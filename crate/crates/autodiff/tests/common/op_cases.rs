//! Randomized gradient-check cases, one family per differentiable operation.
//!
//! Shared between the crate's gradient tests and the workspace acceptance suite.

use distillmt_autodiff::{AttentionSegment, AttentionSpec, Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type CaseFn = Box<dyn Fn(&mut Tape, Var) -> Result<Var>>;

pub struct Case {
    pub input: Tensor,
    pub f: CaseFn,
}

pub const OPS: &[&str] = &[
    "matmul.lhs",
    "matmul.rhs",
    "linear.x",
    "linear.w",
    "linear.b",
    "add",
    "mul",
    "scale",
    "exp",
    "log",
    "relu",
    "softplus",
    "softmax",
    "log_softmax",
    "layer_norm.x",
    "layer_norm.gamma",
    "layer_norm.beta",
    "embedding",
    "dropout",
    "concat",
    "reshape",
    "transpose",
    "attention.q",
    "attention.k",
    "attention.v",
    "attention.causal_dropout",
    "sum",
    "weighted_sum",
];

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero so the ReLU kink is never straddled.
fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.gen_range(0.05..2.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Reduces any tensor to a scalar with fixed random weights so every output
/// element contributes a distinct amount to the gradient.
fn project(rng: &mut ChaCha8Rng, numel: usize) -> Vec<f64> {
    (0..numel).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.gen_range(1..=4), rng.gen_range(1..=5))
}

pub fn make_case(op: &str, seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r, c) = dims(&mut rng);
    match op {
        "matmul.lhs" | "matmul.rhs" => {
            let n = rng.gen_range(1..=4);
            let a = rand_tensor(&mut rng, &[r, c], -1.0, 1.0);
            let b = rand_tensor(&mut rng, &[c, n], -1.0, 1.0);
            let w = project(&mut rng, r * n);
            if op == "matmul.lhs" {
                Case {
                    input: a,
                    f: Box::new(move |t, x| {
                        let b = t.constant(b.clone());
                        let y = t.matmul(x, b)?;
                        t.weighted_sum(y, w.clone())
                    }),
                }
            } else {
                Case {
                    input: b,
                    f: Box::new(move |t, x| {
                        let a = t.constant(a.clone());
                        let y = t.matmul(a, x)?;
                        t.weighted_sum(y, w.clone())
                    }),
                }
            }
        }
        "linear.x" | "linear.w" | "linear.b" => {
            let n = rng.gen_range(1..=4);
            let x = rand_tensor(&mut rng, &[r, c], -1.0, 1.0);
            let wt = rand_tensor(&mut rng, &[c, n], -1.0, 1.0);
            let b = rand_tensor(&mut rng, &[n], -1.0, 1.0);
            let w = project(&mut rng, r * n);
            let which = op.to_string();
            let input = match op {
                "linear.x" => x.clone(),
                "linear.w" => wt.clone(),
                _ => b.clone(),
            };
            Case {
                input,
                f: Box::new(move |t, v| {
                    let (xv, wv, bv) = match which.as_str() {
                        "linear.x" => (v, t.constant(wt.clone()), t.constant(b.clone())),
                        "linear.w" => (t.constant(x.clone()), v, t.constant(b.clone())),
                        _ => (t.constant(x.clone()), t.constant(wt.clone()), v),
                    };
                    let y = t.linear(xv, wv, Some(bv))?;
                    t.weighted_sum(y, w.clone())
                }),
            }
        }
        "add" | "mul" => {
            let x = rand_tensor(&mut rng, &[r, c], -1.0, 1.0);
            let other = rand_tensor(&mut rng, &[r, c], -1.0, 1.0);
            let w = project(&mut rng, r * c);
            let is_add = op == "add";
            Case {
                input: x,
                f: Box::new(move |t, v| {
                    let o = t.constant(other.clone());
                    // Use v twice to exercise fan-out.
                    let y = if is_add { t.add(v, o)? } else { t.mul(v, o)? };
                    let y = if is_add { t.add(y, v)? } else { t.mul(y, v)? };
                    t.weighted_sum(y, w.clone())
                }),
            }
        }
        "scale" | "exp" | "log" | "relu" | "softplus" => {
            let x = match op {
                "log" => rand_tensor(&mut rng, &[r, c], 0.2, 3.0),
                "relu" => rand_away_from_zero(&mut rng, &[r, c]),
                _ => rand_tensor(&mut rng, &[r, c], -2.0, 2.0),
            };
            let w = project(&mut rng, r * c);
            let factor = rng.gen_range(-3.0..3.0);
            let which = op.to_string();
            Case {
                input: x,
                f: Box::new(move |t, v| {
                    let y = match which.as_str() {
                        "scale" => t.scale(v, factor),
                        "exp" => t.exp(v),
                        "log" => t.log(v),
                        "relu" => t.relu(v),
                        _ => t.softplus(v),
                    };
                    t.weighted_sum(y, w.clone())
                }),
            }
        }
        "softmax" => {
            let d = rng.gen_range(1..=3);
            let x = rand_tensor(&mut rng, &[r, c, d], -3.0, 3.0);
            let axis = rng.gen_range(0..3);
            let w = project(&mut rng, r * c * d);
            Case {
                input: x,
                f: Box::new(move |t, v| {
                    let y = t.softmax(v, axis)?;
                    t.weighted_sum(y, w.clone())
                }),
            }
        }
        "log_softmax" => {
            let x = rand_tensor(&mut rng, &[r, c + 1], -3.0, 3.0);
            let w = project(&mut rng, r * (c + 1));
            Case {
                input: x,
                f: Box::new(move |t, v| {
                    let y = t.log_softmax(v);
                    t.weighted_sum(y, w.clone())
                }),
            }
        }
        "layer_norm.x" | "layer_norm.gamma" | "layer_norm.beta" => {
            let c = c + 1;
            let x = rand_tensor(&mut rng, &[r, c], -2.0, 2.0);
            let g = rand_tensor(&mut rng, &[c], 0.5, 1.5);
            let b = rand_tensor(&mut rng, &[c], -0.5, 0.5);
            let w = project(&mut rng, r * c);
            let which = op.to_string();
            let input = match op {
                "layer_norm.x" => x.clone(),
                "layer_norm.gamma" => g.clone(),
                _ => b.clone(),
            };
            Case {
                input,
                f: Box::new(move |t, v| {
                    let (xv, gv, bv) = match which.as_str() {
                        "layer_norm.x" => (v, t.constant(g.clone()), t.constant(b.clone())),
                        "layer_norm.gamma" => (t.constant(x.clone()), v, t.constant(b.clone())),
                        _ => (t.constant(x.clone()), t.constant(g.clone()), v),
                    };
                    let y = t.layer_norm(xv, gv, bv)?;
                    t.weighted_sum(y, w.clone())
                }),
            }
        }
        "embedding" => {
            let table = rand_tensor(&mut rng, &[r + 1, c], -1.0, 1.0);
            let n = rng.gen_range(1..=6);
            let ids: Vec<usize> = (0..n).map(|_| rng.gen_range(0..=r)).collect();
            let w = project(&mut rng, n * c);
            Case {
                input: table,
                f: Box::new(move |t, v| {
                    let y = t.embedding(v, &ids)?;
                    t.weighted_sum(y, w.clone())
                }),
            }
        }
        "dropout" => {
            let x = rand_tensor(&mut rng, &[r, c], -1.0, 1.0);
            let p = rng.gen_range(0.1..0.6);
            let mask_seed = rng.gen();
            let w = project(&mut rng, r * c);
            Case {
                input: x,
                f: Box::new(move |t, v| {
                    let y = t.dropout(v, p, mask_seed)?;
                    t.weighted_sum(y, w.clone())
                }),
            }
        }
        "concat" => {
            let axis = rng.gen_range(0..2);
            let x = rand_tensor(&mut rng, &[r, c], -1.0, 1.0);
            let extra = rng.gen_range(1..=3);
            let other_shape = if axis == 0 { [extra, c] } else { [r, extra] };
            let other = rand_tensor(&mut rng, &other_shape, -1.0, 1.0);
            let total = r * c + extra * other_shape[1 - axis];
            let w = project(&mut rng, total + r * c);
            Case {
                input: x,
                f: Box::new(move |t, v| {
                    let o = t.constant(other.clone());
                    let y = t.concat(&[v, o, v], axis)?;
                    let n = t.value(y).numel();
                    t.weighted_sum(y, w[..n].to_vec())
                }),
            }
        }
        "reshape" => {
            let x = rand_tensor(&mut rng, &[r, c], -1.0, 1.0);
            let m = rand_tensor(&mut rng, &[r * c, 2], -1.0, 1.0);
            let w = project(&mut rng, 2);
            Case {
                input: x,
                f: Box::new(move |t, v| {
                    let flat = t.reshape(v, vec![1, r * c])?;
                    let m = t.constant(m.clone());
                    let y = t.matmul(flat, m)?;
                    t.weighted_sum(y, w.clone())
                }),
            }
        }
        "transpose" => {
            let x = rand_tensor(&mut rng, &[r, c], -1.0, 1.0);
            let m = rand_tensor(&mut rng, &[r, 2], -1.0, 1.0);
            let w = project(&mut rng, c * 2);
            Case {
                input: x,
                f: Box::new(move |t, v| {
                    let xt = t.transpose(v)?;
                    let m = t.constant(m.clone());
                    let y = t.matmul(xt, m)?;
                    t.weighted_sum(y, w.clone())
                }),
            }
        }
        "attention.q" | "attention.k" | "attention.v" | "attention.causal_dropout" => {
            let heads = rng.gen_range(1..=2);
            let dim = heads * rng.gen_range(1..=3);
            let causal = op == "attention.causal_dropout" || rng.gen_bool(0.5);
            // Two packed segments.
            let l1 = rng.gen_range(1..=3);
            let l2 = rng.gen_range(1..=3);
            let (k1, k2) = if causal {
                (l1, l2)
            } else {
                (rng.gen_range(1..=3), rng.gen_range(1..=3))
            };
            let segments = vec![
                AttentionSegment { q_start: 0, q_len: l1, k_start: 0, k_len: k1 },
                AttentionSegment { q_start: l1, q_len: l2, k_start: k1, k_len: k2 },
            ];
            let q = rand_tensor(&mut rng, &[l1 + l2, dim], -1.5, 1.5);
            let k = rand_tensor(&mut rng, &[k1 + k2, dim], -1.5, 1.5);
            let v = rand_tensor(&mut rng, &[k1 + k2, dim], -1.5, 1.5);
            let dropout = (op == "attention.causal_dropout").then(|| (0.3, rng.gen()));
            let spec = AttentionSpec { heads, causal, segments, dropout };
            let w = project(&mut rng, (l1 + l2) * dim);
            let which = match op {
                "attention.k" => 1,
                "attention.v" => 2,
                _ => 0,
            };
            let input = [&q, &k, &v][which].clone();
            Case {
                input,
                f: Box::new(move |t, x| {
                    let mut vars = [None; 3];
                    vars[which] = Some(x);
                    let qv = vars[0].unwrap_or_else(|| t.constant(q.clone()));
                    let kv = vars[1].unwrap_or_else(|| t.constant(k.clone()));
                    let vv = vars[2].unwrap_or_else(|| t.constant(v.clone()));
                    let y = t.attention(qv, kv, vv, spec.clone())?;
                    t.weighted_sum(y, w.clone())
                }),
            }
        }
        "sum" => {
            let x = rand_tensor(&mut rng, &[r, c], -1.0, 1.0);
            Case {
                input: x,
                f: Box::new(|t, v| {
                    let e = t.exp(v);
                    Ok(t.sum(e))
                }),
            }
        }
        "weighted_sum" => {
            let x = rand_tensor(&mut rng, &[r, c], -1.0, 1.0);
            let w = project(&mut rng, r * c);
            Case {
                input: x,
                f: Box::new(move |t, v| {
                    let sq = t.mul(v, v)?;
                    t.weighted_sum(sq, w.clone())
                }),
            }
        }
        other => panic!("unknown op case {other}"),
    }
}
