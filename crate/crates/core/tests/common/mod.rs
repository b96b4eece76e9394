#![allow(dead_code)]

use distillmt_core::data::{
    build_vocabulary, prepare_corpora, synthesize_toy_corpus, Direction, PreparedPair, SynthEntry, SynthSpec,
    TokenizerSpec, Transform, Vocabulary,
};
use distillmt_core::model::ModelConfig;
use distillmt_core::training::TrainConfig;

pub fn tiny_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        encoder_layers: 2,
        decoder_layers: 2,
        emb_dim: 16,
        ffn_dim: 32,
        num_heads: 2,
        dropout: 0.0,
        attention_dropout: 0.0,
        share_embeddings: true,
        vocab_size,
        max_seq_len: 32,
    }
}

pub fn tiny_train(steps: u64) -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        warmup_steps: 10,
        batch_tokens: 200,
        phase1_steps: steps,
        phase2_steps: 0,
        log_interval: 0,
        ..TrainConfig::toy()
    }
}

/// Synthetic corpus with one entry per `(target language, transform, size)`.
pub fn toy_data(entries: &[(&str, Transform, usize)], seed: u64) -> (Vocabulary, Vec<PreparedPair>) {
    let spec = SynthSpec::new(
        entries
            .iter()
            .map(|&(tgt, t, size)| SynthEntry {
                direction: Direction::new("en", tgt),
                transforms: vec![t],
                size,
            })
            .collect(),
    );
    let corpora = synthesize_toy_corpus(&spec, seed).unwrap();
    let vocab = build_vocabulary(&corpora, TokenizerSpec::Whitespace);
    let pairs = prepare_corpora(&corpora, TokenizerSpec::Whitespace, &vocab).unwrap();
    (vocab, pairs)
}
