//! Corpora, vocabularies, tokenization and per-direction sampling.

mod balance;
mod corpus;
mod resource;
mod synth;
mod tokenizer;
mod vocab;

pub use balance::{balance, balance_all};
pub use corpus::{
    build_vocabulary, encode_source, format_tsv, group_by_direction, parse_tsv, prepare,
    prepare_corpora, read_corpus_dir, read_tsv, target_sequence, write_tsv, Direction,
    DirectionCorpus, PreparedPair, TranslationPair,
};
pub use resource::{
    classify_resource, pair_category, parse_resources, read_resources, LanguageResourceEntry,
    ResourceCategory,
};
pub use synth::{
    parse_synth_spec, split_of, synthesize_toy_corpus, Split, SynthEntry, SynthSpec, Transform,
    DEFAULT_ALPHABET,
};
pub use tokenizer::{
    tokenize, CharacterTokenizer, Tokenizer, TokenizerSpec, WhitespaceTokenizer, SPACE_PIECE,
};
pub use vocab::{lang_code_token, TokenId, TokenSequence, Vocabulary, BOS, EOS, PAD, UNK};
