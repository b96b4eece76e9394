use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::vocab::{TokenSequence, Vocabulary};
use crate::error::Error;

/// Splits text into pieces and joins them back.
pub trait Tokenizer: Send + Sync {
    fn pieces(&self, text: &str) -> Vec<String>;
    fn detokenize(&self, pieces: &[String]) -> String;
}

/// Space-separated words.
#[derive(Clone, Copy, Debug, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn pieces(&self, text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_string).collect()
    }

    fn detokenize(&self, pieces: &[String]) -> String {
        pieces.join(" ")
    }
}

/// Marker that stands in for a space under [`CharacterTokenizer`].
pub const SPACE_PIECE: &str = "\u{2581}";

/// One piece per character; spaces become [`SPACE_PIECE`].
#[derive(Clone, Copy, Debug, Default)]
pub struct CharacterTokenizer;

impl Tokenizer for CharacterTokenizer {
    fn pieces(&self, text: &str) -> Vec<String> {
        text.chars()
            .map(|c| if c == ' ' { SPACE_PIECE.to_string() } else { c.to_string() })
            .collect()
    }

    fn detokenize(&self, pieces: &[String]) -> String {
        pieces
            .iter()
            .map(|p| if p == SPACE_PIECE { " " } else { p.as_str() })
            .collect()
    }
}

/// Named tokenizer choice, as it appears in run configs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerSpec {
    #[default]
    Whitespace,
    Character,
}

impl TokenizerSpec {
    pub fn build(self) -> Box<dyn Tokenizer> {
        match self {
            TokenizerSpec::Whitespace => Box::new(WhitespaceTokenizer),
            TokenizerSpec::Character => Box::new(CharacterTokenizer),
        }
    }
}

impl fmt::Display for TokenizerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenizerSpec::Whitespace => "whitespace",
            TokenizerSpec::Character => "character",
        })
    }
}

impl FromStr for TokenizerSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "whitespace" => Ok(TokenizerSpec::Whitespace),
            "character" | "char" => Ok(TokenizerSpec::Character),
            other => Err(Error::Config(format!("unknown tokenizer `{other}`"))),
        }
    }
}

/// Text to ids; pieces missing from `vocab` become `<unk>`.
pub fn tokenize(text: &str, spec: TokenizerSpec, vocab: &Vocabulary) -> TokenSequence {
    vocab.encode(&spec.build().pieces(text))
}
