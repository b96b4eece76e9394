use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::tokenizer::TokenizerSpec;
use super::vocab::{TokenSequence, Vocabulary, EOS};
use crate::error::{Error, Result};

/// Ordered language pair; `en-fr` and `fr-en` are distinct directions.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Direction {
    pub src: String,
    pub tgt: String,
}

impl Direction {
    pub fn new(src: impl Into<String>, tgt: impl Into<String>) -> Self {
        Self {
            src: src.into(),
            tgt: tgt.into(),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.src, self.tgt)
    }
}

fn valid_lang(l: &str) -> bool {
    !l.is_empty() && l.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once('-') {
            Some((a, b)) if valid_lang(a) && valid_lang(b) => Ok(Direction::new(a, b)),
            _ => Err(Error::Data(format!("malformed direction `{s}`; expected src-tgt"))),
        }
    }
}

/// One parallel sentence, stored as text until a tokenizer is applied.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TranslationPair {
    pub src_lang: String,
    pub tgt_lang: String,
    pub src: String,
    pub tgt: String,
}

impl TranslationPair {
    pub fn direction(&self) -> Direction {
        Direction::new(&self.src_lang, &self.tgt_lang)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DirectionCorpus {
    pub direction: Direction,
    pub pairs: Vec<TranslationPair>,
    /// Line count before any sampling.
    pub declared_size: usize,
}

impl DirectionCorpus {
    pub fn new(direction: Direction, pairs: Vec<TranslationPair>) -> Result<Self> {
        if let Some(p) = pairs.iter().find(|p| p.direction() != direction) {
            return Err(Error::Data(format!(
                "pair in direction {} filed under {direction}",
                p.direction()
            )));
        }
        let declared_size = pairs.len();
        Ok(Self {
            direction,
            pairs,
            declared_size,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Groups pairs by direction, in direction order.
pub fn group_by_direction(pairs: Vec<TranslationPair>) -> Vec<DirectionCorpus> {
    let mut groups: BTreeMap<Direction, Vec<TranslationPair>> = BTreeMap::new();
    for p in pairs {
        groups.entry(p.direction()).or_default().push(p);
    }
    groups
        .into_iter()
        .map(|(direction, pairs)| {
            let declared_size = pairs.len();
            DirectionCorpus {
                direction,
                pairs,
                declared_size,
            }
        })
        .collect()
}

/// Parses the four-column corpus format: `src_lang \t tgt_lang \t src \t tgt`.
pub fn parse_tsv(text: &str, origin: &str) -> Result<Vec<TranslationPair>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Data(format!(
                "{origin}:{}: expected 4 tab-separated fields, found {}",
                n + 1,
                fields.len()
            )));
        }
        if !valid_lang(fields[0]) || !valid_lang(fields[1]) {
            return Err(Error::Data(format!("{origin}:{}: malformed language id", n + 1)));
        }
        if fields[2].trim().is_empty() || fields[3].trim().is_empty() {
            return Err(Error::Data(format!("{origin}:{}: empty sentence", n + 1)));
        }
        out.push(TranslationPair {
            src_lang: fields[0].to_string(),
            tgt_lang: fields[1].to_string(),
            src: fields[2].to_string(),
            tgt: fields[3].to_string(),
        });
    }
    Ok(out)
}

pub fn read_tsv(path: &Path) -> Result<Vec<TranslationPair>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tsv(&text, &path.display().to_string())
}

pub fn format_tsv(pairs: &[TranslationPair]) -> String {
    let mut s = String::new();
    for p in pairs {
        s.push_str(&format!("{}\t{}\t{}\t{}\n", p.src_lang, p.tgt_lang, p.src, p.tgt));
    }
    s
}

pub fn write_tsv(path: &Path, pairs: &[TranslationPair]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, format_tsv(pairs)).map_err(|e| Error::io(path, e))
}

/// Reads every `*.tsv` file in `dir` (sorted by name) and groups the pairs.
pub fn read_corpus_dir(dir: &Path) -> Result<Vec<DirectionCorpus>> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "tsv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no .tsv corpus files in {}", dir.display())));
    }
    let mut pairs = Vec::new();
    for f in files {
        pairs.extend(read_tsv(&f)?);
    }
    Ok(group_by_direction(pairs))
}

/// Source side fed to the encoder: the target-language code, then the source.
/// The decoder side never sees a language code.
pub fn encode_source(
    direction: &Direction,
    source_tokens: &[u32],
    vocab: &Vocabulary,
) -> Result<TokenSequence> {
    vocab.lang_code(&direction.src)?;
    let code = vocab.lang_code(&direction.tgt)?;
    let mut out = Vec::with_capacity(source_tokens.len() + 1);
    out.push(code);
    out.extend_from_slice(source_tokens);
    Ok(out)
}

/// Token ids of a pair, ready for the model.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PreparedPair {
    pub direction: Direction,
    /// `[code(tgt)] ++ src ++ [eos]`
    pub source: TokenSequence,
    /// `tgt ++ [eos]`
    pub target: TokenSequence,
}

pub fn target_sequence(text: &str, tokenizer: TokenizerSpec, vocab: &Vocabulary) -> TokenSequence {
    let mut t = super::tokenizer::tokenize(text, tokenizer, vocab);
    t.push(EOS);
    t
}

pub fn prepare(pair: &TranslationPair, tokenizer: TokenizerSpec, vocab: &Vocabulary) -> Result<PreparedPair> {
    let direction = pair.direction();
    let src = super::tokenizer::tokenize(&pair.src, tokenizer, vocab);
    let mut source = encode_source(&direction, &src, vocab)?;
    source.push(EOS);
    Ok(PreparedPair {
        direction,
        source,
        target: target_sequence(&pair.tgt, tokenizer, vocab),
    })
}

pub fn prepare_corpora(
    corpora: &[DirectionCorpus],
    tokenizer: TokenizerSpec,
    vocab: &Vocabulary,
) -> Result<Vec<PreparedPair>> {
    corpora
        .iter()
        .flat_map(|c| c.pairs.iter())
        .map(|p| prepare(p, tokenizer, vocab))
        .collect()
}

/// Vocabulary covering every language and every piece in `corpora`.
pub fn build_vocabulary(corpora: &[DirectionCorpus], tokenizer: TokenizerSpec) -> Vocabulary {
    let tok = tokenizer.build();
    let mut langs = Vec::new();
    let mut pieces = Vec::new();
    for c in corpora {
        langs.push(c.direction.src.clone());
        langs.push(c.direction.tgt.clone());
        for p in &c.pairs {
            pieces.extend(tok.pieces(&p.src));
            pieces.extend(tok.pieces(&p.tgt));
        }
    }
    Vocabulary::build(langs, pieces)
}
