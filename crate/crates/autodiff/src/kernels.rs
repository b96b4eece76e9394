//! Raw numeric kernels on flat row-major buffers.
//!
//! The tape operations are thin wrappers over these; inference code that does
//! not need gradients calls them directly.

/// `c (+)= op(a) · op(b)` where `op(a)` is `m×k` and `op(b)` is `k×n`.
///
/// With `a_t`, `a` is stored as `k×m`; with `b_t`, `b` is stored as `n×k`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    m: usize,
    k: usize,
    n: usize,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above guarantee every index reachable through the
    // given dimensions and strides lies inside the three slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm(a, false, b, false, m, k, n, &mut c, false);
    c
}

/// `x · w + bias` for `x: rows×d_in`, `w: d_in×d_out`.
pub fn linear(x: &[f64], w: &[f64], bias: Option<&[f64]>, rows: usize, d_in: usize, d_out: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows * d_out];
    if let Some(b) = bias {
        for row in y.chunks_exact_mut(d_out) {
            row.copy_from_slice(b);
        }
        gemm(x, false, w, false, rows, d_in, d_out, &mut y, true);
    } else {
        gemm(x, false, w, false, rows, d_in, d_out, &mut y, false);
    }
    y
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Normalizes each row over its `cols` entries. Returns `(y, xhat, rstd)`.
pub fn layer_norm(x: &[f64], cols: usize, gamma: &[f64], beta: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = x.len() / cols;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * cols..(r + 1) * cols];
        let mean = xr.iter().sum::<f64>() / cols as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        rstd[r] = rs;
        for c in 0..cols {
            let h = (xr[c] - mean) * rs;
            xhat[r * cols + c] = h;
            y[r * cols + c] = h * gamma[c] + beta[c];
        }
    }
    (y, xhat, rstd)
}

/// Max-subtracted softmax over a contiguous slice, in place.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Max-subtracted log-softmax over a contiguous slice, in place.
pub fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    for v in row.iter_mut() {
        *v -= lse;
    }
}

/// One attention block: queries `q_len` rows starting at `q_start` attend to
/// keys/values `k_len` rows starting at `k_start`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionSegment {
    pub q_start: usize,
    pub q_len: usize,
    pub k_start: usize,
    pub k_len: usize,
}

impl AttentionSegment {
    /// Number of keys visible to query `i`. Under causal masking the last query
    /// sees every key, so a suffix of queries can be evaluated incrementally.
    #[inline]
    pub fn visible(&self, i: usize, causal: bool) -> usize {
        if causal {
            (i + 1 + self.k_len).saturating_sub(self.q_len).min(self.k_len)
        } else {
            self.k_len
        }
    }
}

/// Multi-head scaled dot-product attention over packed rows.
///
/// `q` holds `Nq×dim` rows and `k`, `v` hold `Nk×dim` rows; head `h` uses
/// columns `h·dim/heads .. (h+1)·dim/heads`. The attention probabilities of each
/// (segment, head) block are appended row-major to `probs` (masked entries are
/// stored as zero). `keep`, when given, scales each probability before it
/// weights the values (dropout) and has the same layout as `probs`.
#[allow(clippy::too_many_arguments)]
pub fn attention(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    dim: usize,
    heads: usize,
    segments: &[AttentionSegment],
    causal: bool,
    keep: Option<&[f64]>,
    probs: &mut Vec<f64>,
) -> Vec<f64> {
    let dh = dim / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let nq = q.len() / dim;
    let mut out = vec![0.0; nq * dim];
    probs.clear();
    probs.resize(attention_prob_len(segments, heads), 0.0);
    let mut offset = 0;
    for seg in segments {
        for h in 0..heads {
            let col = h * dh;
            for i in 0..seg.q_len {
                let qi = &q[(seg.q_start + i) * dim + col..][..dh];
                let visible = seg.visible(i, causal);
                let base = offset + i * seg.k_len;
                let row = &mut probs[base..base + seg.k_len];
                for (j, p) in row.iter_mut().enumerate().take(visible) {
                    let kj = &k[(seg.k_start + j) * dim + col..][..dh];
                    *p = dot(qi, kj) * scale;
                }
                softmax_in_place(&mut row[..visible]);
                let oi = &mut out[(seg.q_start + i) * dim + col..][..dh];
                for j in 0..visible {
                    let mut p = row[j];
                    if let Some(keep) = keep {
                        p *= keep[base + j];
                    }
                    if p == 0.0 {
                        continue;
                    }
                    let vj = &v[(seg.k_start + j) * dim + col..][..dh];
                    for c in 0..dh {
                        oi[c] += p * vj[c];
                    }
                }
            }
            offset += seg.q_len * seg.k_len;
        }
    }
    out
}

/// Number of probability entries [`attention`] writes for these segments.
pub fn attention_prob_len(segments: &[AttentionSegment], heads: usize) -> usize {
    segments.iter().map(|s| s.q_len * s.k_len).sum::<usize>() * heads
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
