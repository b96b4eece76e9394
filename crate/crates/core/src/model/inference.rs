//! Gradient-free inference with cached keys and values, for decoding.

use distillmt_autodiff::kernels::{self, AttentionSegment};

use super::forward::sinusoidal_positions;
use super::params::Model;
use crate::data::TokenId;
use crate::error::{Error, Result};

/// Encoder output projected into every decoder layer's cross-attention keys
/// and values.
#[derive(Clone, Debug)]
pub struct EncodedSource {
    cross_kv: Vec<(Vec<f64>, Vec<f64>)>,
    src_len: usize,
}

impl EncodedSource {
    pub fn len(&self) -> usize {
        self.src_len
    }

    pub fn is_empty(&self) -> bool {
        self.src_len == 0
    }
}

/// Self-attention keys and values of the target prefix decoded so far.
#[derive(Clone, Debug, Default)]
pub struct DecoderCache {
    self_kv: Vec<(Vec<f64>, Vec<f64>)>,
    len: usize,
}

impl DecoderCache {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl Model {
    fn p(&self, name: String) -> &[f64] {
        self.params[&name].data()
    }

    fn lin(&self, x: &[f64], prefix: &str, rows: usize, d_in: usize, d_out: usize) -> Vec<f64> {
        kernels::linear(
            x,
            self.p(format!("{prefix}.weight")),
            Some(self.p(format!("{prefix}.bias"))),
            rows,
            d_in,
            d_out,
        )
    }

    fn norm(&self, x: &[f64], prefix: &str) -> Vec<f64> {
        kernels::layer_norm(
            x,
            self.config.emb_dim,
            self.p(format!("{prefix}.weight")),
            self.p(format!("{prefix}.bias")),
        )
        .0
    }

    fn embed_raw(&self, table: &[f64], ids: &[TokenId], first_pos: usize) -> Vec<f64> {
        let d = self.config.emb_dim;
        let pe = sinusoidal_positions(first_pos + ids.len(), d);
        let scale = (d as f64).sqrt();
        let mut out = Vec::with_capacity(ids.len() * d);
        for (i, &id) in ids.iter().enumerate() {
            let row = &table[id as usize * d..][..d];
            let pos = &pe[(first_pos + i) * d..][..d];
            out.extend(row.iter().zip(pos).map(|(e, p)| e * scale + p));
        }
        out
    }

    fn ffn_raw(&self, x: &mut [f64], prefix: &str, rows: usize) {
        let (d, f) = (self.config.emb_dim, self.config.ffn_dim);
        let h = self.norm(x, &format!("{prefix}.ffn_norm"));
        let mut h = self.lin(&h, &format!("{prefix}.ffn.fc1"), rows, d, f);
        h.iter_mut().for_each(|v| *v = v.max(0.0));
        let h = self.lin(&h, &format!("{prefix}.ffn.fc2"), rows, f, d);
        x.iter_mut().zip(&h).for_each(|(a, b)| *a += b);
    }

    /// Runs the encoder once and precomputes cross-attention keys/values.
    pub fn encode(&self, source: &[TokenId]) -> Result<EncodedSource> {
        self.check_sequence(source)?;
        let d = self.config.emb_dim;
        let n = source.len();
        let mut x = self.embed_raw(self.encoder_embedding().data(), source, 0);
        let seg = [AttentionSegment {
            q_start: 0,
            q_len: n,
            k_start: 0,
            k_len: n,
        }];
        let mut probs = Vec::new();
        for i in 0..self.config.encoder_layers {
            let pre = format!("encoder.layers.{i}");
            let h = self.norm(&x, &format!("{pre}.self_attn_norm"));
            let q = self.lin(&h, &format!("{pre}.self_attn.q"), n, d, d);
            let k = self.lin(&h, &format!("{pre}.self_attn.k"), n, d, d);
            let v = self.lin(&h, &format!("{pre}.self_attn.v"), n, d, d);
            let a = kernels::attention(&q, &k, &v, d, self.config.num_heads, &seg, false, None, &mut probs);
            let o = self.lin(&a, &format!("{pre}.self_attn.out"), n, d, d);
            x.iter_mut().zip(&o).for_each(|(a, b)| *a += b);
            self.ffn_raw(&mut x, &pre, n);
        }
        let memory = self.norm(&x, "encoder.final_norm");
        let cross_kv = (0..self.config.decoder_layers)
            .map(|i| {
                let pre = format!("decoder.layers.{i}.cross_attn");
                (
                    self.lin(&memory, &format!("{pre}.k"), n, d, d),
                    self.lin(&memory, &format!("{pre}.v"), n, d, d),
                )
            })
            .collect();
        Ok(EncodedSource { cross_kv, src_len: n })
    }

    /// Feeds one decoder input token and returns next-token logits.
    pub fn decode_step(&self, enc: &EncodedSource, cache: &mut DecoderCache, token: TokenId) -> Result<Vec<f64>> {
        let c = &self.config;
        if cache.len >= c.max_seq_len {
            return Err(Error::Length {
                len: cache.len + 1,
                max: c.max_seq_len,
            });
        }
        if token as usize >= c.vocab_size {
            return Err(Error::Vocabulary(format!("token id {token} outside vocabulary of {}", c.vocab_size)));
        }
        if cache.self_kv.is_empty() {
            cache.self_kv = vec![(Vec::new(), Vec::new()); c.decoder_layers];
        }
        let d = c.emb_dim;
        let mut x = self.embed_raw(self.decoder_embedding().data(), &[token], cache.len);
        let mut probs = Vec::new();
        let t = cache.len + 1;
        for i in 0..c.decoder_layers {
            let pre = format!("decoder.layers.{i}");
            let h = self.norm(&x, &format!("{pre}.self_attn_norm"));
            let q = self.lin(&h, &format!("{pre}.self_attn.q"), 1, d, d);
            let (ks, vs) = &mut cache.self_kv[i];
            ks.extend(self.lin(&h, &format!("{pre}.self_attn.k"), 1, d, d));
            vs.extend(self.lin(&h, &format!("{pre}.self_attn.v"), 1, d, d));
            let seg = [AttentionSegment {
                q_start: 0,
                q_len: 1,
                k_start: 0,
                k_len: t,
            }];
            let a = kernels::attention(&q, ks, vs, d, c.num_heads, &seg, true, None, &mut probs);
            let o = self.lin(&a, &format!("{pre}.self_attn.out"), 1, d, d);
            x.iter_mut().zip(&o).for_each(|(a, b)| *a += b);

            let h = self.norm(&x, &format!("{pre}.cross_attn_norm"));
            let q = self.lin(&h, &format!("{pre}.cross_attn.q"), 1, d, d);
            let (ck, cv) = &enc.cross_kv[i];
            let seg = [AttentionSegment {
                q_start: 0,
                q_len: 1,
                k_start: 0,
                k_len: enc.src_len,
            }];
            let a = kernels::attention(&q, ck, cv, d, c.num_heads, &seg, false, None, &mut probs);
            let o = self.lin(&a, &format!("{pre}.cross_attn.out"), 1, d, d);
            x.iter_mut().zip(&o).for_each(|(a, b)| *a += b);

            self.ffn_raw(&mut x, &pre, 1);
        }
        cache.len = t;
        let h = self.norm(&x, "decoder.final_norm");
        let mut logits = vec![0.0; c.vocab_size];
        kernels::gemm(&h, false, self.output_embedding().data(), true, 1, d, c.vocab_size, &mut logits, false);
        Ok(logits)
    }
}
