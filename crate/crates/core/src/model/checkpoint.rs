//! Checkpoint files.
//!
//! Byte layout, all integers little-endian:
//!
//! | offset | size | content                                   |
//! |--------|------|-------------------------------------------|
//! | 0      | 8    | magic `DMTCKPT1`                          |
//! | 8      | 8    | `u64` manifest length `L`                 |
//! | 16     | L    | UTF-8 JSON manifest                       |
//! | 16 + L | ...  | tensor data, `f64` values                 |
//!
//! The manifest holds `config`, `vocab` (token list), `metadata`, and a
//! `tensors` array of `{name, shape, offset, len}` sorted by name, where
//! `offset` is a byte offset from the start of the data section and `len` is
//! the element count.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use distillmt_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::Model;
use crate::data::Vocabulary;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DMTCKPT1";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    vocab: Vocabulary,
    metadata: BTreeMap<String, serde_json::Value>,
    tensors: Vec<TensorEntry>,
}

/// A model together with its vocabulary and free-form metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab: Vocabulary,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut offset = 0u64;
        for (name, t) in &self.model.params {
            tensors.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
                len: t.numel() as u64,
            });
            offset += 8 * t.numel() as u64;
        }
        let manifest = Manifest {
            config: self.model.config.clone(),
            vocab: self.vocab.clone(),
            metadata: self.metadata.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.model.params.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let json = bytes.get(16..16 + len).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(json).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let data = &bytes[16 + len..];
        let mut params = BTreeMap::new();
        for e in manifest.tensors {
            let start = e.offset as usize;
            let end = start + 8 * e.len as usize;
            let raw = data.get(start..end).ok_or_else(|| bad(&format!("tensor {} out of bounds", e.name)))?;
            let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            params.insert(e.name, Tensor::new(e.shape, values)?);
        }
        let model = Model::from_params(manifest.config, params)?;
        if manifest.vocab.len() != model.config.vocab_size {
            return Err(bad("vocabulary size disagrees with config"));
        }
        Ok(Self {
            model,
            vocab: manifest.vocab,
            metadata: manifest.metadata,
        })
    }

    /// Writes via a temporary file and rename, so a crash never leaves a
    /// half-written checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    let mut f = fs::File::create(tmp).map_err(|e| Error::io(tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(tmp, e))?;
    f.sync_all().map_err(|e| Error::io(tmp, e))?;
    fs::rename(tmp, path).map_err(|e| Error::io(path, e))
}
