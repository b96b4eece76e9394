use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::corpus::{Direction, DirectionCorpus, TranslationPair};
use crate::derive_seed;
use crate::error::{Error, Result};

pub const DEFAULT_ALPHABET: &str = "abcdefgh";
pub const MIN_LEN: usize = 3;
pub const MAX_LEN: usize = 12;

/// Deterministic token-string maps used to define toy target languages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transform {
    Identity,
    Reverse,
    /// Shift each alphabet symbol forward, wrapping around.
    Caesar(i64),
    /// Emit every token twice.
    Duplicate,
    /// Replace each vowel by the next vowel of the alphabet.
    Vowel,
}

impl Transform {
    pub fn apply(self, tokens: &[String], alphabet: &[String]) -> Vec<String> {
        match self {
            Transform::Identity => tokens.to_vec(),
            Transform::Reverse => tokens.iter().rev().cloned().collect(),
            Transform::Caesar(k) => {
                let n = alphabet.len() as i64;
                tokens
                    .iter()
                    .map(|t| match alphabet.iter().position(|a| a == t) {
                        Some(i) => alphabet[(i as i64 + k).rem_euclid(n) as usize].clone(),
                        None => t.clone(),
                    })
                    .collect()
            }
            Transform::Duplicate => tokens.iter().flat_map(|t| [t.clone(), t.clone()]).collect(),
            Transform::Vowel => {
                let vowels: Vec<&String> =
                    alphabet.iter().filter(|a| matches!(a.as_str(), "a" | "e" | "i" | "o" | "u")).collect();
                tokens
                    .iter()
                    .map(|t| match vowels.iter().position(|v| *v == t) {
                        Some(i) => vowels[(i + 1) % vowels.len()].clone(),
                        None => t.clone(),
                    })
                    .collect()
            }
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::Identity => f.write_str("identity"),
            Transform::Reverse => f.write_str("reverse"),
            Transform::Caesar(k) => write!(f, "caesar-{k}"),
            Transform::Duplicate => f.write_str("duplicate"),
            Transform::Vowel => f.write_str("vowel"),
        }
    }
}

impl FromStr for Transform {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Transform::Identity),
            "reverse" => Ok(Transform::Reverse),
            "duplicate" | "duplication" => Ok(Transform::Duplicate),
            "vowel" => Ok(Transform::Vowel),
            _ => s
                .strip_prefix("caesar-")
                .and_then(|k| k.parse().ok())
                .map(Transform::Caesar)
                .ok_or_else(|| Error::Config(format!("unknown transformation `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthEntry {
    pub direction: Direction,
    /// Applied left to right.
    pub transforms: Vec<Transform>,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub alphabet: Vec<String>,
    pub entries: Vec<SynthEntry>,
}

impl SynthSpec {
    pub fn new(entries: Vec<SynthEntry>) -> Self {
        Self {
            alphabet: DEFAULT_ALPHABET.chars().map(String::from).collect(),
            entries,
        }
    }
}

/// Parses a synthesis spec.
///
/// ```text
/// # optional; a run of symbols or a space-separated list
/// alphabet = abcdefgh
/// en-rv reverse 2000
/// en-cv caesar-1+vowel 500
/// ```
pub fn parse_synth_spec(text: &str) -> Result<SynthSpec> {
    let mut spec = SynthSpec::new(Vec::new());
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Config(format!("synth spec line {}: {msg}", n + 1));
        if let Some(rest) = line.strip_prefix("alphabet") {
            let value = rest.trim_start().strip_prefix('=').ok_or_else(|| bad("expected `alphabet = ...`"))?.trim();
            let symbols: Vec<String> = if value.contains(char::is_whitespace) {
                value.split_whitespace().map(String::from).collect()
            } else {
                value.chars().map(String::from).collect()
            };
            let mut uniq = symbols.clone();
            uniq.sort();
            uniq.dedup();
            if symbols.len() < 2 || uniq.len() != symbols.len() {
                return Err(bad("alphabet needs at least two distinct symbols"));
            }
            spec.alphabet = symbols;
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [direction, transforms, size] = fields[..] else {
            return Err(bad("expected `src-tgt transformation size`"));
        };
        let direction: Direction = direction.parse().map_err(|e: Error| bad(&e.to_string()))?;
        let transforms = transforms
            .split('+')
            .map(|t| t.parse())
            .collect::<Result<Vec<Transform>>>()
            .map_err(|e| bad(&e.to_string()))?;
        let size: usize = size.parse().map_err(|_| bad(&format!("bad size `{size}`")))?;
        if size == 0 {
            return Err(bad("size must be positive"));
        }
        spec.entries.push(SynthEntry {
            direction,
            transforms,
            size,
        });
    }
    if spec.entries.is_empty() {
        return Err(Error::Config("synth spec lists no directions".into()));
    }
    Ok(spec)
}

/// Random source strings and their transformed targets, one corpus per entry.
pub fn synthesize_toy_corpus(spec: &SynthSpec, seed: u64) -> Result<Vec<DirectionCorpus>> {
    let mut out = Vec::with_capacity(spec.entries.len());
    for e in &spec.entries {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("synth/{}", e.direction)));
        let pairs = (0..e.size)
            .map(|_| {
                let len = rng.gen_range(MIN_LEN..=MAX_LEN);
                let src: Vec<String> = (0..len)
                    .map(|_| spec.alphabet[rng.gen_range(0..spec.alphabet.len())].clone())
                    .collect();
                let tgt = e.transforms.iter().fold(src.clone(), |t, f| f.apply(&t, &spec.alphabet));
                TranslationPair {
                    src_lang: e.direction.src.clone(),
                    tgt_lang: e.direction.tgt.clone(),
                    src: src.join(" "),
                    tgt: tgt.join(" "),
                }
            })
            .collect();
        out.push(DirectionCorpus::new(e.direction.clone(), pairs)?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

/// 90/5/5 partition keyed on the source text, so a sentence never lands in
/// two splits.
pub fn split_of(source_text: &str) -> Split {
    let h = Sha256::digest(source_text.as_bytes());
    match u64::from_le_bytes(h[..8].try_into().unwrap()) % 100 {
        0..=89 => Split::Train,
        90..=94 => Split::Dev,
        _ => Split::Test,
    }
}
