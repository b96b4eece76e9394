use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;
pub type TokenSequence = Vec<TokenId>;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;

const BASE_SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Token string used for a language code.
pub fn lang_code_token(lang: &str) -> String {
    format!("__{lang}__")
}

fn parse_lang_code(token: &str) -> Option<&str> {
    token
        .strip_prefix("__")
        .and_then(|t| t.strip_suffix("__"))
        .filter(|l| !l.is_empty())
}

/// Shared source/target vocabulary.
///
/// Ids are dense: the four base specials come first, then one code token per
/// registered language (sorted), then content tokens (sorted).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyFile", into = "VocabularyFile")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    languages: BTreeMap<String, TokenId>,
    num_specials: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    tokens: Vec<String>,
}

impl TryFrom<VocabularyFile> for Vocabulary {
    type Error = Error;
    fn try_from(f: VocabularyFile) -> Result<Self> {
        Vocabulary::from_tokens(f.tokens)
    }
}

impl From<Vocabulary> for VocabularyFile {
    fn from(v: Vocabulary) -> Self {
        VocabularyFile { tokens: v.tokens }
    }
}

impl Vocabulary {
    pub fn build<L, C>(languages: L, content: C) -> Self
    where
        L: IntoIterator,
        L::Item: AsRef<str>,
        C: IntoIterator,
        C::Item: AsRef<str>,
    {
        let langs: BTreeSet<String> = languages.into_iter().map(|l| l.as_ref().to_string()).collect();
        let mut tokens: Vec<String> = BASE_SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(langs.iter().map(|l| lang_code_token(l)));
        let num_specials = tokens.len();
        let reserved: BTreeSet<String> = tokens.iter().cloned().collect();
        let content: BTreeSet<String> = content
            .into_iter()
            .map(|c| c.as_ref().to_string())
            .filter(|c| !reserved.contains(c) && parse_lang_code(c).is_none())
            .collect();
        tokens.extend(content);
        Self::from_parts(tokens, num_specials)
    }

    /// Rebuilds a vocabulary from its token list, e.g. when loading a checkpoint.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < BASE_SPECIALS.len() || tokens[..4].iter().zip(BASE_SPECIALS).any(|(a, b)| a != b) {
            return Err(Error::Vocabulary("token list does not start with the base specials".into()));
        }
        let num_specials = 4 + tokens[4..].iter().take_while(|t| parse_lang_code(t).is_some()).count();
        let distinct: BTreeSet<&String> = tokens.iter().collect();
        if distinct.len() != tokens.len() {
            return Err(Error::Vocabulary("duplicate tokens in vocabulary".into()));
        }
        Ok(Self::from_parts(tokens, num_specials))
    }

    fn from_parts(tokens: Vec<String>, num_specials: usize) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as TokenId)).collect();
        let languages = tokens[4..num_specials]
            .iter()
            .enumerate()
            .map(|(i, t)| (parse_lang_code(t).unwrap().to_string(), (i + 4) as TokenId))
            .collect();
        Self {
            tokens,
            index,
            languages,
            num_specials,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.languages.keys().map(String::as_str)
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        (id as usize) < self.num_specials
    }

    /// Content id for a piece; unknown pieces map to `<unk>`.
    pub fn id(&self, piece: &str) -> TokenId {
        match self.index.get(piece) {
            Some(&id) if !self.is_special(id) => id,
            _ => UNK,
        }
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn lang_code(&self, lang: &str) -> Result<TokenId> {
        self.languages
            .get(lang)
            .copied()
            .ok_or_else(|| Error::Vocabulary(format!("language `{lang}` is not registered")))
    }

    pub fn encode<S: AsRef<str>>(&self, pieces: &[S]) -> TokenSequence {
        pieces.iter().map(|p| self.id(p.as_ref())).collect()
    }

    /// Content pieces of a sequence, stopping at the first `<eos>` and
    /// dropping other specials.
    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .take_while(|&&id| id != EOS)
            .filter(|&&id| !self.is_special(id) || id == UNK)
            .filter_map(|&id| self.token(id).map(str::to_string))
            .collect()
    }
}
