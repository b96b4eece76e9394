use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::TokenId;
use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    /// In `[0, 100]`.
    pub score: f64,
    pub ngram_precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts(seq: &[TokenId], n: usize) -> HashMap<&[TokenId], usize> {
    let mut m = HashMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus-level BLEU over already tokenized sequences.
///
/// Clipped n-gram precisions for n = 1..4; an order with no matches anywhere
/// in the corpus is smoothed to `(0 + 1) / (total + 1)`. The brevity penalty
/// is `min(1, exp(1 − ref_len / hyp_len))`, and an empty hypothesis corpus
/// scores 0.
pub fn corpus_bleu<H: AsRef<[TokenId]>, R: AsRef<[TokenId]>>(hypotheses: &[H], references: &[R]) -> Result<BleuScore> {
    if hypotheses.is_empty() {
        return Err(Error::Contract("corpus_bleu needs at least one hypothesis".into()));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::Contract(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hypotheses.iter().zip(references) {
        let (h, r) = (h.as_ref(), r.as_ref());
        if r.is_empty() {
            return Err(Error::Contract("zero-length reference".into()));
        }
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let rc = ngram_counts(r, n);
            for (g, c) in ngram_counts(h, n) {
                matches[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        precisions[n] = if matches[n] == 0 {
            1.0 / (totals[n] + 1) as f64
        } else {
            matches[n] as f64 / totals[n] as f64
        };
    }
    if hyp_len == 0 {
        return Ok(BleuScore {
            score: 0.0,
            ngram_precisions: precisions,
            brevity_penalty: (1.0 - ref_len as f64).exp().max(f64::MIN_POSITIVE),
            hyp_len,
            ref_len,
        });
    }
    let bp = (1.0 - ref_len as f64 / hyp_len as f64).exp().min(1.0);
    let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
    let score = (100.0 * bp * log_mean.exp()).clamp(0.0, 100.0);
    Ok(BleuScore {
        score,
        ngram_precisions: precisions,
        brevity_penalty: bp,
        hyp_len,
        ref_len,
    })
}
