use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::PreparedPair;
use crate::derive_seed;
use crate::error::{Error, Result};

/// Padding-free cost of a pair: the longer of its two sides.
pub fn pair_cost(p: &PreparedPair) -> usize {
    p.source.len().max(p.target.len())
}

/// Groups pair indices into micro-batches with `len × longest ≤ budget`.
///
/// Pairs are sorted by cost with random tie-breaks so that similar lengths
/// share a batch; batch order is then shuffled. A pair longer than the budget
/// gets a batch of its own.
pub fn make_batches(data: &[PreparedPair], budget: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut keyed: Vec<(usize, u64, usize)> = data.iter().enumerate().map(|(i, p)| (pair_cost(p), rng.gen(), i)).collect();
    keyed.sort_unstable();
    let mut batches = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    let mut longest = 0;
    for (cost, _, i) in keyed {
        let l = longest.max(cost);
        if !cur.is_empty() && (cur.len() + 1) * l > budget {
            batches.push(std::mem::take(&mut cur));
            longest = 0;
        }
        longest = longest.max(cost);
        cur.push(i);
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches.shuffle(rng);
    batches
}

/// Endless stream of micro-batches, reshuffled every epoch.
pub struct BatchStream<'a> {
    data: &'a [PreparedPair],
    budget: usize,
    seed: u64,
    epoch: u64,
    batches: Vec<Vec<usize>>,
    pos: usize,
}

impl<'a> BatchStream<'a> {
    pub fn new(data: &'a [PreparedPair], budget: usize, seed: u64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Data("no training pairs".into()));
        }
        let mut s = Self {
            data,
            budget,
            seed,
            epoch: 0,
            batches: Vec::new(),
            pos: 0,
        };
        s.reshuffle();
        Ok(s)
    }

    fn reshuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &format!("batches/{}", self.epoch)));
        self.batches = make_batches(self.data, self.budget, &mut rng);
        self.pos = 0;
    }

    /// Number of completed passes over the data.
    pub fn epochs_done(&self) -> u64 {
        self.epoch
    }

    pub fn next_batch(&mut self) -> &[usize] {
        if self.pos == self.batches.len() {
            self.epoch += 1;
            self.reshuffle();
        }
        self.pos += 1;
        &self.batches[self.pos - 1]
    }
}
