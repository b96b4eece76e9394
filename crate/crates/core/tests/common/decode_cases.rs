//! Table-driven scorers with a known search space, shared with the
//! workspace acceptance suite.
#![allow(dead_code)]

use distillmt_core::data::{TokenId, EOS};
use distillmt_core::decoding::{BeamHypothesis, StepScorer};
use distillmt_core::{derive_seed, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Log-probabilities that depend on the whole prefix, drawn from a seeded
/// hash of it.
pub struct TableScorer {
    pub vocab: usize,
    pub seed: u64,
    /// Added to `<eos>` before normalizing.
    pub eos_bias: f64,
}

impl TableScorer {
    pub fn new(vocab: usize, seed: u64) -> Self {
        Self { vocab, seed, eos_bias: 0.0 }
    }

    pub fn log_probs(&self, prefix: &[TokenId]) -> Vec<f64> {
        let label = format!("{prefix:?}");
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &label));
        let mut logits: Vec<f64> = (0..self.vocab).map(|_| rng.gen_range(-3.0..3.0)).collect();
        if (EOS as usize) < self.vocab {
            logits[EOS as usize] += self.eos_bias;
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z = logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln() + m;
        logits.iter().map(|l| l - z).collect()
    }
}

impl StepScorer for TableScorer {
    type State = Vec<TokenId>;

    fn begin(&self) -> Result<(Vec<TokenId>, Vec<f64>)> {
        Ok((Vec::new(), self.log_probs(&[])))
    }

    fn step(&self, state: &mut Vec<TokenId>, token: TokenId) -> Result<Vec<f64>> {
        state.push(token);
        Ok(self.log_probs(state))
    }
}

/// Every complete output: ends in `<eos>` or has `max_len` tokens.
pub fn enumerate_paths(scorer: &TableScorer, max_len: usize) -> Vec<BeamHypothesis> {
    fn walk(s: &TableScorer, max_len: usize, prefix: &mut Vec<TokenId>, score: f64, out: &mut Vec<BeamHypothesis>) {
        let lp = s.log_probs(prefix);
        for (z, l) in lp.iter().enumerate() {
            prefix.push(z as TokenId);
            let total = score + l;
            if z as TokenId == EOS || prefix.len() == max_len {
                out.push(BeamHypothesis {
                    tokens: prefix.clone(),
                    score: total,
                    finished: z as TokenId == EOS,
                });
            } else {
                walk(s, max_len, prefix, total, out);
            }
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    walk(scorer, max_len, &mut Vec::new(), 0.0, &mut out);
    out
}

/// Best path by length-normalized score, ties to the smaller token sequence.
pub fn exhaustive_best(scorer: &TableScorer, max_len: usize, length_penalty: f64) -> BeamHypothesis {
    enumerate_paths(scorer, max_len)
        .into_iter()
        .reduce(|best, h| {
            let (a, b) = (h.normalized(length_penalty), best.normalized(length_penalty));
            if a > b || (a == b && h.tokens < best.tokens) {
                h
            } else {
                best
            }
        })
        .unwrap()
}
