use std::collections::BTreeMap;

use distillmt_autodiff::Tensor;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    /// Uniform in ±1/√fan_in, where fan_in is the leading dimension.
    Weight,
    /// Uniform in ±1/√emb_dim.
    Embedding,
    Zeros,
    Ones,
}

struct Slot {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn linear_slots(out: &mut Vec<Slot>, prefix: &str, d_in: usize, d_out: usize) {
    out.push(Slot {
        name: format!("{prefix}.weight"),
        shape: vec![d_in, d_out],
        init: Init::Weight,
    });
    out.push(Slot {
        name: format!("{prefix}.bias"),
        shape: vec![d_out],
        init: Init::Zeros,
    });
}

fn norm_slots(out: &mut Vec<Slot>, prefix: &str, d: usize) {
    out.push(Slot {
        name: format!("{prefix}.weight"),
        shape: vec![d],
        init: Init::Ones,
    });
    out.push(Slot {
        name: format!("{prefix}.bias"),
        shape: vec![d],
        init: Init::Zeros,
    });
}

fn attention_slots(out: &mut Vec<Slot>, prefix: &str, d: usize) {
    for p in ["q", "k", "v", "out"] {
        linear_slots(out, &format!("{prefix}.{p}"), d, d);
    }
}

fn layout(cfg: &ModelConfig) -> Vec<Slot> {
    let (d, f, v) = (cfg.emb_dim, cfg.ffn_dim, cfg.vocab_size);
    let mut s = Vec::new();
    let embed = |s: &mut Vec<Slot>, name: &str| {
        s.push(Slot {
            name: name.to_string(),
            shape: vec![v, d],
            init: Init::Embedding,
        })
    };
    if cfg.share_embeddings {
        embed(&mut s, "embed.weight");
    } else {
        embed(&mut s, "encoder.embed.weight");
        embed(&mut s, "decoder.embed.weight");
        embed(&mut s, "output.weight");
    }
    for i in 0..cfg.encoder_layers {
        let p = format!("encoder.layers.{i}");
        attention_slots(&mut s, &format!("{p}.self_attn"), d);
        norm_slots(&mut s, &format!("{p}.self_attn_norm"), d);
        linear_slots(&mut s, &format!("{p}.ffn.fc1"), d, f);
        linear_slots(&mut s, &format!("{p}.ffn.fc2"), f, d);
        norm_slots(&mut s, &format!("{p}.ffn_norm"), d);
    }
    norm_slots(&mut s, "encoder.final_norm", d);
    for i in 0..cfg.decoder_layers {
        let p = format!("decoder.layers.{i}");
        attention_slots(&mut s, &format!("{p}.self_attn"), d);
        norm_slots(&mut s, &format!("{p}.self_attn_norm"), d);
        attention_slots(&mut s, &format!("{p}.cross_attn"), d);
        norm_slots(&mut s, &format!("{p}.cross_attn_norm"), d);
        linear_slots(&mut s, &format!("{p}.ffn.fc1"), d, f);
        linear_slots(&mut s, &format!("{p}.ffn.fc2"), f, d);
        norm_slots(&mut s, &format!("{p}.ffn_norm"), d);
    }
    norm_slots(&mut s, "decoder.final_norm", d);
    s
}

/// Names and shapes of every parameter, sorted by name.
pub fn param_shapes(cfg: &ModelConfig) -> BTreeMap<String, Vec<usize>> {
    layout(cfg).into_iter().map(|s| (s.name, s.shape)).collect()
}

/// Encoder-decoder parameters plus the config that fixes their shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: BTreeMap<String, Tensor>,
}

impl Model {
    /// Freshly initialized model.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        // Layout order, not name order, drives the RNG stream so that adding a
        // layer does not reshuffle the earlier ones.
        for slot in layout(&config) {
            let n: usize = slot.shape.iter().product();
            let data: Vec<f64> = match slot.init {
                Init::Weight | Init::Embedding => {
                    let fan = if slot.init == Init::Weight { slot.shape[0] } else { config.emb_dim };
                    let a = 1.0 / (fan as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-a..a)).collect()
                }
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
            };
            params.insert(slot.name, Tensor::new(slot.shape, data)?);
        }
        Ok(Self { config, params })
    }

    /// Builds a model from named tensors, checking them against `config`.
    pub fn from_params(config: ModelConfig, params: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let expected = param_shapes(&config);
        for (name, shape) in &expected {
            match params.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Checkpoint(format!(
                        "parameter {name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::Checkpoint(format!("missing parameter {name}"))),
            }
        }
        if let Some(extra) = params.keys().find(|k| !expected.contains_key(*k)) {
            return Err(Error::Checkpoint(format!("unexpected parameter {extra}")));
        }
        Ok(Self { config, params })
    }

    pub fn param(&self, name: &str) -> &Tensor {
        &self.params[name]
    }

    pub fn encoder_embedding(&self) -> &Tensor {
        self.param(if self.config.share_embeddings { "embed.weight" } else { "encoder.embed.weight" })
    }

    pub fn decoder_embedding(&self) -> &Tensor {
        self.param(if self.config.share_embeddings { "embed.weight" } else { "decoder.embed.weight" })
    }

    pub fn output_embedding(&self) -> &Tensor {
        self.param(if self.config.share_embeddings { "embed.weight" } else { "output.weight" })
    }
}

/// Total number of scalar parameters; a shared embedding counts once.
pub fn param_count(model: &Model) -> usize {
    model.params.values().map(Tensor::numel).sum()
}

/// Student whose every tensor is copied from the matching teacher tensor:
/// embeddings, final norms, and the first `encoder_layers` / `decoder_layers`
/// layers of each stack.
pub fn init_student_from_teacher(teacher: &Model, student_config: &ModelConfig) -> Result<Model> {
    student_config.validate()?;
    let t = &teacher.config;
    let s = student_config;
    let mismatch = [
        ("emb_dim", t.emb_dim == s.emb_dim),
        ("ffn_dim", t.ffn_dim == s.ffn_dim),
        ("num_heads", t.num_heads == s.num_heads),
        ("vocab_size", t.vocab_size == s.vocab_size),
        ("share_embeddings", t.share_embeddings == s.share_embeddings),
    ];
    if let Some((field, _)) = mismatch.iter().find(|(_, same)| !same) {
        return Err(Error::Config(format!("student and teacher differ in {field}")));
    }
    for (field, st, te) in [
        ("encoder_layers", s.encoder_layers, t.encoder_layers),
        ("decoder_layers", s.decoder_layers, t.decoder_layers),
    ] {
        if st > te {
            return Err(Error::Config(format!("student {field} {st} exceeds teacher's {te}")));
        }
    }
    let params = param_shapes(s)
        .into_keys()
        .map(|name| {
            let tensor = teacher.params[&name].clone();
            (name, tensor)
        })
        .collect();
    Model::from_params(s.clone(), params)
}
