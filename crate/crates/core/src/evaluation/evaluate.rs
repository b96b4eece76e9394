use std::collections::BTreeMap;

use distillmt_autodiff::kernels;
use rayon::prelude::*;

use super::bleu::{corpus_bleu, BleuScore};
use crate::data::{prepare, Direction, DirectionCorpus, PreparedPair, TokenId, TokenizerSpec, Vocabulary, EOS};
use crate::decoding::{decode, DecodeConfig};
use crate::error::Result;
use crate::model::Model;
use crate::training::shift_right;

/// Tokens before the first `<eos>`.
pub fn strip_eos(seq: &[TokenId]) -> &[TokenId] {
    let end = seq.iter().position(|&t| t == EOS).unwrap_or(seq.len());
    &seq[..end]
}

/// Decodes every source, fanning out over the rayon pool. Output order
/// matches input order, so results do not depend on the thread count.
pub fn decode_all(model: &Model, pairs: &[PreparedPair], cfg: &DecodeConfig) -> Result<Vec<Vec<TokenId>>> {
    pairs.par_iter().map(|p| decode(model, &p.source, cfg)).collect()
}

/// BLEU per direction of already prepared pairs.
pub fn evaluate_prepared(
    model: &Model,
    pairs: &[PreparedPair],
    cfg: &DecodeConfig,
) -> Result<BTreeMap<Direction, BleuScore>> {
    let outputs = decode_all(model, pairs, cfg)?;
    let mut grouped: BTreeMap<Direction, (Vec<&[TokenId]>, Vec<&[TokenId]>)> = BTreeMap::new();
    for (p, out) in pairs.iter().zip(&outputs) {
        let e = grouped.entry(p.direction.clone()).or_default();
        e.0.push(strip_eos(out));
        e.1.push(strip_eos(&p.target));
    }
    grouped
        .into_iter()
        .map(|(d, (h, r))| Ok((d, corpus_bleu(&h, &r)?)))
        .collect()
}

/// Decodes held-out corpora and scores each direction.
pub fn evaluate_model(
    model: &Model,
    vocab: &Vocabulary,
    eval_corpora: &[DirectionCorpus],
    tokenizer: TokenizerSpec,
    cfg: &DecodeConfig,
) -> Result<BTreeMap<Direction, BleuScore>> {
    let pairs = eval_corpora
        .iter()
        .flat_map(|c| c.pairs.iter())
        .map(|p| prepare(p, tokenizer, vocab))
        .collect::<Result<Vec<_>>>()?;
    evaluate_prepared(model, &pairs, cfg)
}

/// Teacher-forced next-token accuracy over every target position.
pub fn token_accuracy(model: &Model, pairs: &[PreparedPair]) -> Result<f64> {
    let per: Vec<(usize, usize)> = pairs
        .par_iter()
        .map(|p| {
            let logits = model.forward(&p.source, &shift_right(&p.target), None)?;
            let k = logits.cols();
            let hits = logits
                .data()
                .chunks_exact(k)
                .zip(&p.target)
                .filter(|(row, &g)| kernels::argmax(row) == g as usize)
                .count();
            Ok((hits, p.target.len()))
        })
        .collect::<Result<_>>()?;
    let (h, n) = per.iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(if n == 0 { 0.0 } else { h as f64 / n as f64 })
}
