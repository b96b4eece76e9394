use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::corpus::DirectionCorpus;
use crate::derive_seed;
use crate::error::{Error, Result};

/// Resamples a direction to exactly `quota` pairs.
///
/// Undersized corpora are repeated whole, with the remainder drawn without
/// replacement, so multiplicities differ by at most one. Oversized corpora are
/// subsampled without replacement, keeping the original order.
pub fn balance(corpus: &DirectionCorpus, quota: usize, seed: u64) -> Result<DirectionCorpus> {
    if quota == 0 {
        return Err(Error::Data("balance quota must be positive".into()));
    }
    let size = corpus.pairs.len();
    if size == 0 {
        return Err(Error::Data(format!("cannot balance empty corpus {}", corpus.direction)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("balance/{}", corpus.direction)));
    let pairs = if size == quota {
        corpus.pairs.clone()
    } else if size < quota {
        let mut out = Vec::with_capacity(quota);
        for _ in 0..quota / size {
            out.extend_from_slice(&corpus.pairs);
        }
        let mut rest = sample(&mut rng, size, quota % size).into_vec();
        rest.sort_unstable();
        out.extend(rest.into_iter().map(|i| corpus.pairs[i].clone()));
        out
    } else {
        let mut keep = sample(&mut rng, size, quota).into_vec();
        keep.sort_unstable();
        keep.into_iter().map(|i| corpus.pairs[i].clone()).collect()
    };
    Ok(DirectionCorpus {
        direction: corpus.direction.clone(),
        pairs,
        declared_size: corpus.declared_size,
    })
}

pub fn balance_all(corpora: &[DirectionCorpus], quota: usize, seed: u64) -> Result<Vec<DirectionCorpus>> {
    corpora.iter().map(|c| balance(c, quota, seed)).collect()
}
