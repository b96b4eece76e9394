use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{AutodiffError, Result};
use crate::kernels::{self, AttentionSegment};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Attention configuration for [`Tape::attention`].
#[derive(Clone, Debug)]
pub struct AttentionSpec {
    pub heads: usize,
    pub causal: bool,
    pub segments: Vec<AttentionSegment>,
    /// Dropout probability applied to the attention weights and its seed.
    pub dropout: Option<(f64, u64)>,
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Linear { x: Var, w: Var, b: Option<Var>, d_in: usize, d_out: usize },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Softplus(Var),
    Softmax { x: Var, len: usize, inner: usize },
    LogSoftmax { x: Var, cols: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64>, cols: usize },
    Embedding { table: Var, ids: Vec<usize>, dim: usize },
    Dropout { x: Var, keep: Vec<f64> },
    Concat { parts: Vec<(Var, usize)>, outer: usize },
    Reshape(Var),
    Transpose { x: Var, rows: usize, cols: usize },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        dim: usize,
        spec: AttentionSpec,
        probs: Vec<f64>,
        keep: Option<Vec<f64>>,
    },
    Sum(Var),
    WeightedSum { x: Var, weights: Vec<f64> },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Wengert list of recorded operations.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it
/// and a single reverse sweep in [`Tape::backward`] visits each node once.
/// Operations whose inputs carry no gradient are recorded as constants.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v` as a tensor; zeros when no gradient reached it.
    pub fn tensor(&self, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => Tensor::from_parts(self.shapes[v.0].clone(), g.to_vec()),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn require_2d(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(AutodiffError::Shape {
            op,
            left: s.to_vec(),
            right: vec![],
        }),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// `a [m×k] · b [k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = require_2d("matmul", ta)?;
        let (k2, n) = require_2d("matmul", tb)?;
        if k != k2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let data = kernels::matmul(ta.data(), tb.data(), m, k, n);
        let out = Tensor::from_parts(vec![m, n], data);
        Ok(self.push(out, &[a, b], Op::MatMul { a, b, m, k, n }))
    }

    /// Affine map `x · w + b` applied to every row of `x` (last axis `d_in`).
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let (d_in, d_out) = require_2d("linear", tw)?;
        if tx.cols() != d_in {
            return Err(shape_err("linear", tx, tw));
        }
        if let Some(b) = b {
            let tb = self.value(b);
            if tb.numel() != d_out {
                return Err(shape_err("linear", tw, tb));
            }
        }
        let rows = tx.rows();
        let data = kernels::linear(tx.data(), tw.data(), b.map(|b| self.value(b).data()), rows, d_in, d_out);
        let mut shape = tx.shape().to_vec();
        *shape.last_mut().unwrap() = d_out;
        let out = Tensor::from_parts(shape, data);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, &inputs, Op::Linear { x, w, b, d_in, d_out }))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        Ok(())
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        self.push(out, &[x], op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        Ok(self.push(out, &[a, b], Op::Add(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        Ok(self.push(out, &[a, b], Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.map(x, |v| v * factor, Op::Scale(x, factor))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.map(x, f64::ln, Op::Log(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.map(x, softplus, Op::Softplus(x))
    }

    /// Softmax along `axis`, max-subtracted.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        let shape = t.shape();
        if axis >= shape.len() {
            return Err(AutodiffError::Axis {
                op: "softmax",
                axis,
                shape: shape.to_vec(),
            });
        }
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut data = t.data().to_vec();
        let mut lane = vec![0.0; len];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                for a in 0..len {
                    lane[a] = data[base + a * inner];
                }
                kernels::softmax_in_place(&mut lane);
                for a in 0..len {
                    data[base + a * inner] = lane[a];
                }
            }
        }
        let out = Tensor::from_parts(shape.to_vec(), data);
        Ok(self.push(out, &[x], Op::Softmax { x, len, inner }))
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let cols = t.cols();
        let mut data = t.data().to_vec();
        for row in data.chunks_exact_mut(cols) {
            kernels::log_softmax_in_place(row);
        }
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        self.push(out, &[x], Op::LogSoftmax { x, cols })
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let t = self.value(x);
        let cols = t.cols();
        let (tg, tb) = (self.value(gamma), self.value(beta));
        if tg.numel() != cols {
            return Err(shape_err("layer_norm", t, tg));
        }
        if tb.numel() != cols {
            return Err(shape_err("layer_norm", t, tb));
        }
        let (y, xhat, rstd) = kernels::layer_norm(t.data(), cols, tg.data(), tb.data());
        let out = Tensor::from_parts(t.shape().to_vec(), y);
        Ok(self.push(
            out,
            &[x, gamma, beta],
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
                cols,
            },
        ))
    }

    /// Gathers rows of `table [V×d]` into `[ids.len()×d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (vocab, dim) = require_2d("embedding", t)?;
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(AutodiffError::Index {
                    op: "embedding",
                    index: id,
                    size: vocab,
                });
            }
            data.extend_from_slice(t.row(id));
        }
        if ids.is_empty() {
            return Err(AutodiffError::Contract("embedding of zero ids".into()));
        }
        let out = Tensor::from_parts(vec![ids.len(), dim], data);
        Ok(self.push(
            out,
            &[table],
            Op::Embedding {
                table,
                ids: ids.to_vec(),
                dim,
            },
        ))
    }

    /// Inverted dropout with its own seeded stream. `p == 0` is the identity.
    pub fn dropout(&mut self, x: Var, p: f64, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(AutodiffError::Contract(format!("dropout probability {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let t = self.value(x);
        let keep = dropout_mask(t.numel(), p, seed);
        let data = t.data().iter().zip(&keep).map(|(v, k)| v * k).collect();
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        Ok(self.push(out, &[x], Op::Dropout { x, keep }))
    }

    /// Concatenates along `axis`; all other axes must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .value(*parts.first().ok_or_else(|| AutodiffError::Contract("concat of nothing".into()))?)
            .clone();
        let shape = first.shape();
        if axis >= shape.len() {
            return Err(AutodiffError::Axis {
                op: "concat",
                axis,
                shape: shape.to_vec(),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut total_axis = 0;
        let mut chunks = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            let s = t.shape();
            if s.len() != shape.len() || s[..axis] != shape[..axis] || s[axis + 1..] != shape[axis + 1..] {
                return Err(shape_err("concat", &first, t));
            }
            total_axis += s[axis];
            chunks.push((p, s[axis] * inner));
        }
        let mut data = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for &(p, chunk) in &chunks {
                data.extend_from_slice(&self.value(p).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = total_axis;
        let out = Tensor::from_parts(out_shape, data);
        Ok(self.push(out, parts, Op::Concat { parts: chunks, outer }))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).reshaped(shape)?;
        Ok(self.push(out, &[x], Op::Reshape(x)))
    }

    /// Transpose of a matrix.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = require_2d("transpose", t)?;
        let src = t.data();
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                data[c * rows + r] = src[r * cols + c];
            }
        }
        let out = Tensor::from_parts(vec![cols, rows], data);
        Ok(self.push(out, &[x], Op::Transpose { x, rows, cols }))
    }

    /// Masked multi-head attention: `softmax(q·kᵀ/√d_head + mask) · v` per segment.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, spec: AttentionSpec) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let (nq, dim) = require_2d("attention", tq)?;
        let (nk, dk) = require_2d("attention", tk)?;
        if dk != dim {
            return Err(shape_err("attention", tq, tk));
        }
        if tv.shape() != tk.shape() {
            return Err(shape_err("attention", tk, tv));
        }
        if spec.heads == 0 || dim % spec.heads != 0 {
            return Err(AutodiffError::Contract(format!(
                "attention: width {dim} not divisible into {} heads",
                spec.heads
            )));
        }
        for s in &spec.segments {
            if s.q_start + s.q_len > nq || s.k_start + s.k_len > nk || s.k_len == 0 {
                return Err(AutodiffError::Contract(format!("attention: segment {s:?} out of range")));
            }
            if spec.causal && s.k_len < s.q_len {
                return Err(AutodiffError::Contract(format!("attention: causal segment {s:?} has fewer keys than queries")));
            }
        }
        let keep = match spec.dropout {
            Some((p, seed)) if p > 0.0 => Some(dropout_mask(
                kernels::attention_prob_len(&spec.segments, spec.heads),
                p,
                seed,
            )),
            _ => None,
        };
        let mut probs = Vec::new();
        let data = kernels::attention(
            tq.data(),
            tk.data(),
            tv.data(),
            dim,
            spec.heads,
            &spec.segments,
            spec.causal,
            keep.as_deref(),
            &mut probs,
        );
        let out = Tensor::from_parts(vec![nq, dim], data);
        Ok(self.push(
            out,
            &[q, k, v],
            Op::Attention {
                q,
                k,
                v,
                dim,
                spec,
                probs,
                keep,
            },
        ))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), &[x], Op::Sum(x))
    }

    /// `Σ_i weights[i] · x[i]` with `weights` held constant.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<f64>) -> Result<Var> {
        let t = self.value(x);
        if weights.len() != t.numel() {
            return Err(AutodiffError::Shape {
                op: "weighted_sum",
                left: t.shape().to_vec(),
                right: vec![weights.len()],
            });
        }
        let s = kernels::dot(t.data(), &weights);
        Ok(self.push(Tensor::scalar(s), &[x], Op::WeightedSum { x, weights }))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.numel() != 1 {
            return Err(AutodiffError::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                out.shape()
            )));
        }
        let n = output.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    /// Adds into the gradient slot of `v`, allocating it on first touch.
    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.numel()]))
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                if let Some(da) = self.slot(grads, *a) {
                    kernels::gemm(g, false, self.value(*b).data(), true, m, n, k, da, true);
                }
                if let Some(db) = self.slot(grads, *b) {
                    kernels::gemm(self.value(*a).data(), true, g, false, k, m, n, db, true);
                }
            }
            Op::Linear { x, w, b, d_in, d_out } => {
                let (d_in, d_out) = (*d_in, *d_out);
                let rows = g.len() / d_out;
                if let Some(dx) = self.slot(grads, *x) {
                    kernels::gemm(g, false, self.value(*w).data(), true, rows, d_out, d_in, dx, true);
                }
                if let Some(dw) = self.slot(grads, *w) {
                    kernels::gemm(self.value(*x).data(), true, g, false, d_in, rows, d_out, dw, true);
                }
                if let Some(b) = b {
                    if let Some(db) = self.slot(grads, *b) {
                        for row in g.chunks_exact(d_out) {
                            for (d, v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(d) = self.slot(grads, *v) {
                        add_into(d, g);
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, gv), bv) in da.iter_mut().zip(g).zip(self.value(*b).data()) {
                        *d += gv * bv;
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for ((d, gv), av) in db.iter_mut().zip(g).zip(self.value(*a).data()) {
                        *d += gv * av;
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(d) = self.slot(grads, *x) {
                    for (d, gv) in d.iter_mut().zip(g) {
                        *d += gv * s;
                    }
                }
            }
            Op::Exp(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    for ((d, gv), y) in d.iter_mut().zip(g).zip(node.value.data()) {
                        *d += gv * y;
                    }
                }
            }
            Op::Log(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    for ((d, gv), xv) in d.iter_mut().zip(g).zip(self.value(*x).data()) {
                        *d += gv / xv;
                    }
                }
            }
            Op::Relu(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    for ((d, gv), xv) in d.iter_mut().zip(g).zip(self.value(*x).data()) {
                        if *xv > 0.0 {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Softplus(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    for ((d, gv), xv) in d.iter_mut().zip(g).zip(self.value(*x).data()) {
                        *d += gv * sigmoid(*xv);
                    }
                }
            }
            Op::Softmax { x, len, inner } => {
                let (len, inner) = (*len, *inner);
                if let Some(d) = self.slot(grads, *x) {
                    let y = node.value.data();
                    let outer = y.len() / (len * inner);
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * len * inner + i;
                            let dotp: f64 = (0..len).map(|a| g[base + a * inner] * y[base + a * inner]).sum();
                            for a in 0..len {
                                let idx = base + a * inner;
                                d[idx] += y[idx] * (g[idx] - dotp);
                            }
                        }
                    }
                }
            }
            Op::LogSoftmax { x, cols } => {
                if let Some(d) = self.slot(grads, *x) {
                    let y = node.value.data();
                    for ((drow, grow), yrow) in d.chunks_exact_mut(*cols).zip(g.chunks_exact(*cols)).zip(y.chunks_exact(*cols)) {
                        let gsum: f64 = grow.iter().sum();
                        for c in 0..*cols {
                            drow[c] += grow[c] - yrow[c].exp() * gsum;
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
                cols,
            } => {
                let cols = *cols;
                let gam = self.value(*gamma).data();
                if let Some(dg) = self.slot(grads, *gamma) {
                    for (grow, hrow) in g.chunks_exact(cols).zip(xhat.chunks_exact(cols)) {
                        for c in 0..cols {
                            dg[c] += grow[c] * hrow[c];
                        }
                    }
                }
                if let Some(db) = self.slot(grads, *beta) {
                    for grow in g.chunks_exact(cols) {
                        add_into(db, grow);
                    }
                }
                if let Some(dx) = self.slot(grads, *x) {
                    let mut dh = vec![0.0; cols];
                    for (r, (grow, hrow)) in g.chunks_exact(cols).zip(xhat.chunks_exact(cols)).enumerate() {
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for c in 0..cols {
                            dh[c] = grow[c] * gam[c];
                            mean_dh += dh[c];
                            mean_dh_h += dh[c] * hrow[c];
                        }
                        mean_dh /= cols as f64;
                        mean_dh_h /= cols as f64;
                        let drow = &mut dx[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            drow[c] += rstd[r] * (dh[c] - mean_dh - hrow[c] * mean_dh_h);
                        }
                    }
                }
            }
            Op::Embedding { table, ids, dim } => {
                if let Some(d) = self.slot(grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut d[id * dim..(id + 1) * dim], &g[r * dim..(r + 1) * dim]);
                    }
                }
            }
            Op::Dropout { x, keep } => {
                if let Some(d) = self.slot(grads, *x) {
                    for ((d, gv), k) in d.iter_mut().zip(g).zip(keep) {
                        *d += gv * k;
                    }
                }
            }
            Op::Concat { parts, outer } => {
                let row: usize = parts.iter().map(|(_, c)| c).sum();
                let mut offset = 0;
                for &(p, chunk) in parts {
                    if let Some(d) = self.slot(grads, p) {
                        for o in 0..*outer {
                            add_into(&mut d[o * chunk..(o + 1) * chunk], &g[o * row + offset..o * row + offset + chunk]);
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Reshape(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    add_into(d, g);
                }
            }
            Op::Transpose { x, rows, cols } => {
                if let Some(d) = self.slot(grads, *x) {
                    for r in 0..*rows {
                        for c in 0..*cols {
                            d[r * cols + c] += g[c * rows + r];
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                dim,
                spec,
                probs,
                keep,
            } => self.attention_backward(*q, *k, *v, *dim, spec, probs, keep.as_deref(), g, grads),
            Op::Sum(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    for d in d.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::WeightedSum { x, weights } => {
                if let Some(d) = self.slot(grads, *x) {
                    for (d, w) in d.iter_mut().zip(weights) {
                        *d += g[0] * w;
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        dim: usize,
        spec: &AttentionSpec,
        probs: &[f64],
        keep: Option<&[f64]>,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut dq = vec![0.0; qd.len()];
        let mut dk = vec![0.0; kd.len()];
        let mut dv = vec![0.0; vd.len()];
        let heads = spec.heads;
        let dh = dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut offset = 0;
        let mut dp = Vec::new();
        for seg in &spec.segments {
            for h in 0..heads {
                let col = h * dh;
                for i in 0..seg.q_len {
                    let visible = seg.visible(i, spec.causal);
                    let base = offset + i * seg.k_len;
                    let p = &probs[base..base + visible];
                    let gi = &g[(seg.q_start + i) * dim + col..][..dh];
                    dp.clear();
                    dp.resize(visible, 0.0);
                    for j in 0..visible {
                        let vj = &vd[(seg.k_start + j) * dim + col..][..dh];
                        let kept = keep.map_or(1.0, |kp| kp[base + j]);
                        dp[j] = kernels::dot(gi, vj) * kept;
                        let pw = p[j] * kept;
                        if pw != 0.0 {
                            let dvj = &mut dv[(seg.k_start + j) * dim + col..][..dh];
                            for c in 0..dh {
                                dvj[c] += pw * gi[c];
                            }
                        }
                    }
                    let inner: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                    let qi = &qd[(seg.q_start + i) * dim + col..][..dh];
                    for j in 0..visible {
                        let ds = p[j] * (dp[j] - inner) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let kj = &kd[(seg.k_start + j) * dim + col..][..dh];
                        let dqi = &mut dq[(seg.q_start + i) * dim + col..][..dh];
                        for c in 0..dh {
                            dqi[c] += ds * kj[c];
                        }
                        let dkj = &mut dk[(seg.k_start + j) * dim + col..][..dh];
                        for c in 0..dh {
                            dkj[c] += ds * qi[c];
                        }
                    }
                }
                offset += seg.q_len * seg.k_len;
            }
        }
        for (var, d) in [(q, dq), (k, dk), (v, dv)] {
            if let Some(slot) = self.slot(grads, var) {
                add_into(slot, &d);
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Scaled keep-mask for inverted dropout: entries are `0` or `1/(1-p)`.
pub fn dropout_mask(len: usize, p: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kept = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { kept })
        .collect()
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
