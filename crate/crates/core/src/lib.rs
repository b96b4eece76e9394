//! Sequence-to-sequence knowledge distillation at desk scale.
//!
//! Transformer encoder-decoder models built on `distillmt-autodiff`, the
//! CE + word-level KD objective, balanced multilingual sampling, beam search,
//! corpus BLEU with resource-category reporting, and latency benchmarking.

pub mod data;
pub mod decoding;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod model;
pub mod training;

pub use error::{Error, Result};

use sha2::{Digest, Sha256};

/// Stable child seed for a named stream.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}
