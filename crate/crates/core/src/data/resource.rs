use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Resource bucket of a language by its parallel data to/from English.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ResourceCategory {
    VeryLow,
    Low,
    Medium,
    High,
}

impl ResourceCategory {
    pub const ALL: [ResourceCategory; 4] = [Self::VeryLow, Self::Low, Self::Medium, Self::High];

    pub fn label(self) -> &'static str {
        match self {
            Self::VeryLow => "VL",
            Self::Low => "L",
            Self::Medium => "M",
            Self::High => "H",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.label() == label)
    }
}

impl fmt::Display for ResourceCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageResourceEntry {
    pub language: String,
    /// Sentence count to/from English.
    pub size_to_from_english: u64,
}

/// Upper edges are inclusive: 100K is VeryLow, 1M is Low, 100M is Medium.
pub fn classify_resource(entry: &LanguageResourceEntry) -> ResourceCategory {
    match entry.size_to_from_english {
        0..=100_000 => ResourceCategory::VeryLow,
        100_001..=1_000_000 => ResourceCategory::Low,
        1_000_001..=100_000_000 => ResourceCategory::Medium,
        _ => ResourceCategory::High,
    }
}

/// A direction is as poorly resourced as its weaker side.
pub fn pair_category(src: ResourceCategory, tgt: ResourceCategory) -> ResourceCategory {
    src.min(tgt)
}

/// Resources file: one `language<TAB or space>size` per line, `#` comments.
pub fn parse_resources(text: &str) -> Result<Vec<LanguageResourceEntry>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let (Some(lang), Some(size), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::Data(format!("resources line {}: expected `language size`", n + 1)));
        };
        let size = u64::from_str(size)
            .map_err(|_| Error::Data(format!("resources line {}: bad size `{size}`", n + 1)))?;
        out.push(LanguageResourceEntry {
            language: lang.to_string(),
            size_to_from_english: size,
        });
    }
    Ok(out)
}

pub fn read_resources(path: &Path) -> Result<Vec<LanguageResourceEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_resources(&text)
}
