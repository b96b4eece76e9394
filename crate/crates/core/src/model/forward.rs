use std::collections::BTreeMap;

use distillmt_autodiff::{AttentionSegment, AttentionSpec, Tape, Tensor, Var};

use super::params::Model;
use crate::data::TokenId;
use crate::error::{Error, Result};

/// Whether dropout is active. Training dropout draws from streams derived
/// from `seed`, so a step is reproducible.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

/// Model parameters recorded on a tape.
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
    shared: bool,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Var {
        self.vars[name]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    fn embed(&self, side: &str) -> Var {
        if self.shared {
            self.get("embed.weight")
        } else {
            self.get(&format!("{side}.embed.weight"))
        }
    }

    fn output(&self) -> Var {
        if self.shared {
            self.get("embed.weight")
        } else {
            self.get("output.weight")
        }
    }
}

/// Fixed sinusoidal position table rows `0..len`.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; len * dim];
    for pos in 0..len {
        for i in 0..dim / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            out[pos * dim + 2 * i] = angle.sin();
            out[pos * dim + 2 * i + 1] = angle.cos();
        }
    }
    out
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

struct Dropper {
    mode: Mode,
    calls: u64,
}

impl Dropper {
    fn next_seed(&mut self) -> Option<u64> {
        match self.mode {
            Mode::Eval => None,
            Mode::Train { seed } => {
                self.calls += 1;
                Some(splitmix(seed ^ splitmix(self.calls)))
            }
        }
    }

    fn apply(&mut self, tape: &mut Tape, x: Var, p: f64) -> Result<Var> {
        match self.next_seed() {
            Some(seed) if p > 0.0 => Ok(tape.dropout(x, p, seed)?),
            _ => Ok(x),
        }
    }

    fn attention(&mut self, p: f64) -> Option<(f64, u64)> {
        self.next_seed().filter(|_| p > 0.0).map(|s| (p, s))
    }
}

/// Row offsets of each sentence in a packed batch.
fn offsets(seqs: &[&[TokenId]]) -> Vec<usize> {
    let mut acc = 0;
    seqs.iter()
        .map(|s| {
            let o = acc;
            acc += s.len();
            o
        })
        .collect()
}

impl Model {
    /// Records every parameter on `tape`; `trainable = false` records them as
    /// constants so no gradient reaches them.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        let vars = self
            .params
            .iter()
            .map(|(k, t)| (k.clone(), tape.leaf(t.clone(), trainable)))
            .collect();
        ParamVars {
            vars,
            shared: self.config.share_embeddings,
        }
    }

    pub(crate) fn check_sequence(&self, seq: &[TokenId]) -> Result<()> {
        if seq.is_empty() {
            return Err(Error::Contract("empty token sequence".into()));
        }
        if seq.len() > self.config.max_seq_len {
            return Err(Error::Length {
                len: seq.len(),
                max: self.config.max_seq_len,
            });
        }
        if let Some(&bad) = seq.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::Vocabulary(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn embed_packed(
        &self,
        tape: &mut Tape,
        table: Var,
        seqs: &[&[TokenId]],
        drop: &mut Dropper,
    ) -> Result<Var> {
        let d = self.config.emb_dim;
        let ids: Vec<usize> = seqs.iter().flat_map(|s| s.iter().map(|&t| t as usize)).collect();
        let longest = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let table_pe = sinusoidal_positions(longest, d);
        let mut pe = Vec::with_capacity(ids.len() * d);
        for s in seqs {
            pe.extend_from_slice(&table_pe[..s.len() * d]);
        }
        let x = tape.embedding(table, &ids)?;
        let x = tape.scale(x, (d as f64).sqrt());
        let pe = tape.constant(Tensor::new(vec![ids.len(), d], pe)?);
        let x = tape.add(x, pe)?;
        drop.apply(tape, x, self.config.dropout)
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_block(
        &self,
        tape: &mut Tape,
        p: &ParamVars,
        prefix: &str,
        x: Var,
        memory: Option<Var>,
        segments: Vec<AttentionSegment>,
        causal: bool,
        drop: &mut Dropper,
    ) -> Result<Var> {
        let h = tape.layer_norm(x, p.get(&format!("{prefix}_norm.weight")), p.get(&format!("{prefix}_norm.bias")))?;
        let kv_src = memory.unwrap_or(h);
        let lin = |tape: &mut Tape, input: Var, name: &str| -> Result<Var> {
            Ok(tape.linear(
                input,
                p.get(&format!("{prefix}.{name}.weight")),
                Some(p.get(&format!("{prefix}.{name}.bias"))),
            )?)
        };
        let q = lin(tape, h, "q")?;
        let k = lin(tape, kv_src, "k")?;
        let v = lin(tape, kv_src, "v")?;
        let spec = AttentionSpec {
            heads: self.config.num_heads,
            causal,
            segments,
            dropout: drop.attention(self.config.attention_dropout),
        };
        let a = tape.attention(q, k, v, spec)?;
        let o = lin(tape, a, "out")?;
        let o = drop.apply(tape, o, self.config.dropout)?;
        Ok(tape.add(x, o)?)
    }

    fn ffn_block(&self, tape: &mut Tape, p: &ParamVars, prefix: &str, x: Var, drop: &mut Dropper) -> Result<Var> {
        let h = tape.layer_norm(x, p.get(&format!("{prefix}.ffn_norm.weight")), p.get(&format!("{prefix}.ffn_norm.bias")))?;
        let h = tape.linear(h, p.get(&format!("{prefix}.ffn.fc1.weight")), Some(p.get(&format!("{prefix}.ffn.fc1.bias"))))?;
        let h = tape.relu(h);
        let h = tape.linear(h, p.get(&format!("{prefix}.ffn.fc2.weight")), Some(p.get(&format!("{prefix}.ffn.fc2.bias"))))?;
        let h = drop.apply(tape, h, self.config.dropout)?;
        Ok(tape.add(x, h)?)
    }

    /// Encoder states for a packed batch of sources, `[Σ len × emb_dim]`.
    pub fn encode_batch(&self, tape: &mut Tape, p: &ParamVars, sources: &[&[TokenId]], mode: Mode) -> Result<Var> {
        let mut drop = Dropper { mode, calls: 0 };
        self.encode_with(tape, p, sources, &mut drop)
    }

    fn encode_with(&self, tape: &mut Tape, p: &ParamVars, sources: &[&[TokenId]], drop: &mut Dropper) -> Result<Var> {
        for s in sources {
            self.check_sequence(s)?;
        }
        let offs = offsets(sources);
        let segments: Vec<AttentionSegment> = sources
            .iter()
            .zip(&offs)
            .map(|(s, &o)| AttentionSegment {
                q_start: o,
                q_len: s.len(),
                k_start: o,
                k_len: s.len(),
            })
            .collect();
        let mut x = self.embed_packed(tape, p.embed("encoder"), sources, drop)?;
        for i in 0..self.config.encoder_layers {
            let prefix = format!("encoder.layers.{i}");
            x = self.attention_block(tape, p, &format!("{prefix}.self_attn"), x, None, segments.clone(), false, drop)?;
            x = self.ffn_block(tape, p, &prefix, x, drop)?;
        }
        Ok(tape.layer_norm(x, p.get("encoder.final_norm.weight"), p.get("encoder.final_norm.bias"))?)
    }

    /// Next-token logits for a packed batch, `[Σ target_len × vocab_size]`.
    ///
    /// `sources[i]` already carries its language code; `target_inputs[i]` is
    /// the shifted target beginning with `<bos>`.
    pub fn forward_batch(
        &self,
        tape: &mut Tape,
        p: &ParamVars,
        sources: &[&[TokenId]],
        target_inputs: &[&[TokenId]],
        mode: Mode,
    ) -> Result<Var> {
        if sources.len() != target_inputs.len() || sources.is_empty() {
            return Err(Error::Contract(format!(
                "forward_batch needs matching non-empty batches, got {} sources and {} targets",
                sources.len(),
                target_inputs.len()
            )));
        }
        for t in target_inputs {
            self.check_sequence(t)?;
        }
        let mut drop = Dropper { mode, calls: 0 };
        let memory = self.encode_with(tape, p, sources, &mut drop)?;
        let src_offs = offsets(sources);
        let tgt_offs = offsets(target_inputs);
        let self_segs: Vec<AttentionSegment> = target_inputs
            .iter()
            .zip(&tgt_offs)
            .map(|(t, &o)| AttentionSegment {
                q_start: o,
                q_len: t.len(),
                k_start: o,
                k_len: t.len(),
            })
            .collect();
        let cross_segs: Vec<AttentionSegment> = (0..sources.len())
            .map(|i| AttentionSegment {
                q_start: tgt_offs[i],
                q_len: target_inputs[i].len(),
                k_start: src_offs[i],
                k_len: sources[i].len(),
            })
            .collect();
        let mut x = self.embed_packed(tape, p.embed("decoder"), target_inputs, &mut drop)?;
        for i in 0..self.config.decoder_layers {
            let prefix = format!("decoder.layers.{i}");
            x = self.attention_block(tape, p, &format!("{prefix}.self_attn"), x, None, self_segs.clone(), true, &mut drop)?;
            x = self.attention_block(
                tape,
                p,
                &format!("{prefix}.cross_attn"),
                x,
                Some(memory),
                cross_segs.clone(),
                false,
                &mut drop,
            )?;
            x = self.ffn_block(tape, p, &prefix, x, &mut drop)?;
        }
        let h = tape.layer_norm(x, p.get("decoder.final_norm.weight"), p.get("decoder.final_norm.bias"))?;
        let out_t = tape.transpose(p.output())?;
        Ok(tape.linear(h, out_t, None)?)
    }

    /// Logits `[target_prefix.len() × vocab_size]` for one sentence.
    pub fn forward(&self, source: &[TokenId], target_prefix: &[TokenId], train_mode: Option<u64>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let mode = train_mode.map_or(Mode::Eval, |seed| Mode::Train { seed });
        let logits = self.forward_batch(&mut tape, &p, &[source], &[target_prefix], mode)?;
        Ok(tape.value(logits).clone())
    }
}
