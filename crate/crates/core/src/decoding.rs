//! Greedy and beam-search generation.

use std::cmp::Ordering;

use distillmt_autodiff::kernels;
use serde::{Deserialize, Serialize};

use crate::data::{TokenId, TokenSequence, BOS, EOS};
use crate::error::{Error, Result};
use crate::model::{DecoderCache, EncodedSource, Model};

/// Incremental next-token log-probabilities.
pub trait StepScorer {
    type State: Clone;
    /// State after the `<bos>` input, with the first position's log-probs.
    fn begin(&self) -> Result<(Self::State, Vec<f64>)>;
    /// Feeds `token` and returns log-probs for the following position.
    fn step(&self, state: &mut Self::State, token: TokenId) -> Result<Vec<f64>>;
}

/// A model conditioned on one encoded source.
pub struct ModelScorer<'a> {
    model: &'a Model,
    enc: EncodedSource,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a Model, source: &[TokenId]) -> Result<Self> {
        Ok(Self {
            model,
            enc: model.encode(source)?,
        })
    }
}

impl StepScorer for ModelScorer<'_> {
    type State = DecoderCache;

    fn begin(&self) -> Result<(DecoderCache, Vec<f64>)> {
        let mut cache = DecoderCache::default();
        let lp = self.step(&mut cache, BOS)?;
        Ok((cache, lp))
    }

    fn step(&self, state: &mut DecoderCache, token: TokenId) -> Result<Vec<f64>> {
        let mut logits = self.model.decode_step(&self.enc, state, token)?;
        kernels::log_softmax_in_place(&mut logits);
        Ok(logits)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamHypothesis {
    pub tokens: TokenSequence,
    /// Sum of token log-probabilities.
    pub score: f64,
    pub finished: bool,
}

impl BeamHypothesis {
    /// `score / len^length_penalty`; with penalty 0 this is the raw score.
    pub fn normalized(&self, length_penalty: f64) -> f64 {
        if length_penalty == 0.0 || self.tokens.is_empty() {
            self.score
        } else {
            self.score / (self.tokens.len() as f64).powf(length_penalty)
        }
    }
}

/// Higher score first, then lexicographically smaller tokens.
fn rank(a_score: f64, a_tokens: &[TokenId], b_score: f64, b_tokens: &[TokenId]) -> Ordering {
    b_score.partial_cmp(&a_score).unwrap_or(Ordering::Equal).then_with(|| a_tokens.cmp(b_tokens))
}

/// Argmax decoding; ties go to the lowest token id. The output ends with
/// `<eos>` unless `max_len` tokens were emitted first.
pub fn greedy_search<S: StepScorer>(scorer: &S, max_len: usize) -> Result<BeamHypothesis> {
    let mut hyp = BeamHypothesis {
        tokens: Vec::new(),
        score: 0.0,
        finished: false,
    };
    if max_len == 0 {
        return Ok(hyp);
    }
    let (mut state, mut lp) = scorer.begin()?;
    loop {
        // Compare accumulated scores, exactly as beam search does.
        let totals: Vec<f64> = lp.iter().map(|l| hyp.score + l).collect();
        let z = kernels::argmax(&totals);
        hyp.score = totals[z];
        hyp.tokens.push(z as TokenId);
        if z as TokenId == EOS {
            hyp.finished = true;
            return Ok(hyp);
        }
        if hyp.tokens.len() >= max_len {
            return Ok(hyp);
        }
        lp = scorer.step(&mut state, z as TokenId)?;
    }
}

/// Beam search keeping the `beam_size` best expansions per step. Hypotheses
/// ending in `<eos>` retire into a pool; search stops once the pool holds
/// `beam_size` hypotheses or nothing is live, and live hypotheses that reach
/// `max_len` join the pool unfinished. Returns the pooled hypothesis with the
/// best length-normalized score, ties to the lexicographically smallest.
pub fn beam_search<S: StepScorer>(
    scorer: &S,
    beam_size: usize,
    max_len: usize,
    length_penalty: f64,
) -> Result<BeamHypothesis> {
    if beam_size == 0 {
        return Err(Error::Contract("beam_size must be at least 1".into()));
    }
    if max_len == 0 {
        return Ok(BeamHypothesis {
            tokens: Vec::new(),
            score: 0.0,
            finished: false,
        });
    }
    struct Live<St> {
        tokens: TokenSequence,
        score: f64,
        state: St,
        lp: Vec<f64>,
    }
    let (state, lp) = scorer.begin()?;
    let mut live = vec![Live {
        tokens: Vec::new(),
        score: 0.0,
        state,
        lp,
    }];
    let mut pool: Vec<BeamHypothesis> = Vec::new();
    while !live.is_empty() && pool.len() < beam_size {
        // (score, parent, token) for the best beam_size expansions of each parent.
        let mut cands: Vec<(f64, usize, TokenId)> = Vec::new();
        for (pi, h) in live.iter().enumerate() {
            let mut local: Vec<(f64, usize, TokenId)> =
                h.lp.iter().enumerate().map(|(z, l)| (h.score + l, pi, z as TokenId)).collect();
            let keep = beam_size.min(local.len());
            local.select_nth_unstable_by(keep - 1, |a, b| rank(a.0, &[a.2], b.0, &[b.2]));
            local.truncate(keep);
            cands.extend(local);
        }
        let seq = |c: &(f64, usize, TokenId)| {
            let mut t = live[c.1].tokens.clone();
            t.push(c.2);
            t
        };
        let mut cands: Vec<(f64, usize, TokenId, TokenSequence)> =
            cands.iter().map(|c| (c.0, c.1, c.2, seq(c))).collect();
        cands.sort_by(|a, b| rank(a.0, &a.3, b.0, &b.3));
        cands.truncate(beam_size);
        let mut next = Vec::with_capacity(cands.len());
        for (score, parent, z, tokens) in cands {
            if z == EOS {
                pool.push(BeamHypothesis {
                    tokens,
                    score,
                    finished: true,
                });
            } else if tokens.len() >= max_len {
                pool.push(BeamHypothesis {
                    tokens,
                    score,
                    finished: false,
                });
            } else {
                let mut state = live[parent].state.clone();
                let lp = scorer.step(&mut state, z)?;
                next.push(Live { tokens, score, state, lp });
            }
        }
        live = next;
    }
    pool.into_iter()
        .min_by(|a, b| rank(a.normalized(length_penalty), &a.tokens, b.normalized(length_penalty), &b.tokens))
        .ok_or_else(|| Error::Contract("beam search produced no hypothesis".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub length_penalty: f64,
    /// Fixed output budget; when absent, `2·source_len + 8`.
    pub max_len: Option<usize>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_size: 5,
            length_penalty: 1.0,
            max_len: None,
        }
    }
}

impl DecodeConfig {
    pub fn greedy() -> Self {
        Self {
            beam_size: 1,
            ..Self::default()
        }
    }

    pub fn max_len_for(&self, source_len: usize, model_max: usize) -> usize {
        self.max_len.unwrap_or(2 * source_len + 8).min(model_max)
    }
}

pub fn greedy_decode(model: &Model, source: &[TokenId], max_len: usize) -> Result<TokenSequence> {
    Ok(greedy_search(&ModelScorer::new(model, source)?, max_len)?.tokens)
}

pub fn beam_decode(
    model: &Model,
    source: &[TokenId],
    beam_size: usize,
    max_len: usize,
    length_penalty: f64,
) -> Result<TokenSequence> {
    Ok(beam_search(&ModelScorer::new(model, source)?, beam_size, max_len, length_penalty)?.tokens)
}

/// Translates one encoded source; beam size 1 runs greedy search.
pub fn decode(model: &Model, source: &[TokenId], cfg: &DecodeConfig) -> Result<TokenSequence> {
    let max_len = cfg.max_len_for(source.len(), model.config.max_seq_len);
    if cfg.beam_size == 1 {
        greedy_decode(model, source, max_len)
    } else {
        beam_decode(model, source, cfg.beam_size, max_len, cfg.length_penalty)
    }
}
