use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub emb_dim: usize,
    pub ffn_dim: usize,
    pub num_heads: usize,
    pub dropout: f64,
    pub attention_dropout: f64,
    /// Ties encoder, decoder and output embeddings to one matrix.
    pub share_embeddings: bool,
    pub vocab_size: usize,
    pub max_seq_len: usize,
}

impl ModelConfig {
    /// Teacher shape used on the toy tasks.
    pub fn toy_teacher(vocab_size: usize) -> Self {
        Self {
            encoder_layers: 4,
            decoder_layers: 4,
            emb_dim: 64,
            ffn_dim: 128,
            num_heads: 4,
            dropout: 0.1,
            attention_dropout: 0.0,
            share_embeddings: true,
            vocab_size,
            max_seq_len: 64,
        }
    }

    /// Same encoder, one decoder layer.
    pub fn toy_student(vocab_size: usize) -> Self {
        Self {
            decoder_layers: 1,
            ..Self::toy_teacher(vocab_size)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("emb_dim", self.emb_dim),
            ("ffn_dim", self.ffn_dim),
            ("num_heads", self.num_heads),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.emb_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "emb_dim {} is not divisible by num_heads {}",
                self.emb_dim, self.num_heads
            )));
        }
        for (name, p) in [("dropout", self.dropout), ("attention_dropout", self.attention_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} outside [0, 1)")));
            }
        }
        Ok(())
    }
}
