//! Flat key/value run configuration.
//!
//! Values are resolved in layers: profile defaults, then the config file,
//! then `--set key=value`, then `--seed`. Without a profile the file must
//! supply every key. The resolved map is what run manifests record.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use clap::ValueEnum;
use distillmt_core::data::TokenizerSpec;
use distillmt_core::losses::{AlphaMode, DistillConfig};
use distillmt_core::model::ModelConfig;
use distillmt_core::training::TrainConfig;

use crate::CliError;

/// Every config key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("encoder_layers", "teacher encoder depth"),
    ("decoder_layers", "teacher decoder depth"),
    ("student_encoder_layers", "student encoder depth"),
    ("student_decoder_layers", "student decoder depth"),
    ("emb_dim", "model width"),
    ("ffn_dim", "feed-forward inner width"),
    ("num_heads", "attention heads"),
    ("dropout", "residual and embedding dropout"),
    ("attention_dropout", "dropout on attention probabilities"),
    ("share_embeddings", "tie encoder, decoder and output embeddings"),
    ("max_seq_len", "longest sequence the model accepts"),
    ("tokenizer", "whitespace or character"),
    ("quota", "sentence pairs per direction after balancing"),
    ("lr", "peak learning rate"),
    ("warmup_steps", "linear warmup length"),
    ("warmup_init_lr", "learning rate at step 0"),
    ("adam_beta1", "Adam first-moment decay"),
    ("adam_beta2", "Adam second-moment decay"),
    ("adam_eps", "Adam denominator epsilon"),
    ("clip_norm", "global gradient-norm clip"),
    ("label_smoothing", "label smoothing of the CE term"),
    ("batch_tokens", "token budget per micro-batch"),
    ("accumulation_steps", "micro-batches per update"),
    ("phase1_steps", "CE-only steps"),
    ("phase2_steps", "CE + alpha KD steps"),
    ("teacher_steps", "teacher training steps; 0 uses phase1_steps + phase2_steps"),
    ("max_epochs", "epoch cap on top of the step budget; 0 disables"),
    ("seed", "master seed"),
    ("log_interval", "steps between log lines"),
    ("checkpoint_interval", "steps between intermediate checkpoints; 0 disables"),
    ("alpha_mode", "fixed or trainable"),
    ("alpha_init", "initial (or fixed) KD weight"),
    ("finetune_steps", "default recovery fine-tuning steps"),
    ("finetune_lr", "peak learning rate for fine-tuning"),
    ("finetune_warmup_steps", "warmup for fine-tuning"),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    /// Desk-scale defaults for the synthetic tasks.
    Toy,
    /// Full-scale architecture and optimization values.
    Paper,
}

pub type ConfigMap = BTreeMap<String, String>;

fn put(m: &mut ConfigMap, k: &str, v: impl ToString) {
    m.insert(k.to_string(), v.to_string());
}

fn train_defaults(m: &mut ConfigMap, t: &TrainConfig) {
    put(m, "lr", t.lr);
    put(m, "warmup_steps", t.warmup_steps);
    put(m, "warmup_init_lr", t.warmup_init_lr);
    put(m, "adam_beta1", t.adam_beta1);
    put(m, "adam_beta2", t.adam_beta2);
    put(m, "adam_eps", t.adam_eps);
    put(m, "clip_norm", t.clip_norm);
    put(m, "label_smoothing", t.label_smoothing);
    put(m, "batch_tokens", t.batch_tokens);
    put(m, "accumulation_steps", t.accumulation_steps);
    put(m, "phase1_steps", t.phase1_steps);
    put(m, "phase2_steps", t.phase2_steps);
    put(m, "max_epochs", t.max_epochs);
    put(m, "seed", t.seed);
    put(m, "log_interval", t.log_interval);
    put(m, "checkpoint_interval", t.checkpoint_interval);
}

pub fn profile_defaults(p: Profile) -> ConfigMap {
    let mut m = ConfigMap::new();
    match p {
        Profile::Toy => {
            let t = ModelConfig::toy_teacher(1);
            put(&mut m, "encoder_layers", t.encoder_layers);
            put(&mut m, "decoder_layers", t.decoder_layers);
            put(&mut m, "student_encoder_layers", 4);
            put(&mut m, "student_decoder_layers", 1);
            put(&mut m, "emb_dim", t.emb_dim);
            put(&mut m, "ffn_dim", t.ffn_dim);
            put(&mut m, "num_heads", t.num_heads);
            put(&mut m, "dropout", t.dropout);
            put(&mut m, "attention_dropout", t.attention_dropout);
            put(&mut m, "share_embeddings", t.share_embeddings);
            put(&mut m, "max_seq_len", t.max_seq_len);
            put(&mut m, "quota", 2000);
            put(&mut m, "teacher_steps", 3000);
            put(&mut m, "finetune_steps", 200);
            put(&mut m, "finetune_lr", 1e-3);
            put(&mut m, "finetune_warmup_steps", 20);
            train_defaults(&mut m, &TrainConfig::toy());
        }
        Profile::Paper => {
            put(&mut m, "encoder_layers", 12);
            put(&mut m, "decoder_layers", 12);
            put(&mut m, "student_encoder_layers", 12);
            put(&mut m, "student_decoder_layers", 3);
            put(&mut m, "emb_dim", 1024);
            put(&mut m, "ffn_dim", 4096);
            put(&mut m, "num_heads", 16);
            put(&mut m, "dropout", 0.1);
            put(&mut m, "attention_dropout", 0.1);
            put(&mut m, "share_embeddings", true);
            put(&mut m, "max_seq_len", 1024);
            put(&mut m, "quota", 100_000);
            put(&mut m, "teacher_steps", 0);
            put(&mut m, "finetune_steps", 200);
            put(&mut m, "finetune_lr", 1e-4);
            put(&mut m, "finetune_warmup_steps", 0);
            train_defaults(&mut m, &TrainConfig::paper());
        }
    }
    put(&mut m, "tokenizer", TokenizerSpec::Whitespace);
    let d = DistillConfig::default();
    put(&mut m, "alpha_mode", d.alpha_mode);
    put(&mut m, "alpha_init", d.alpha_init);
    m
}

fn known(key: &str) -> Result<(), CliError> {
    if KEYS.iter().any(|(k, _)| *k == key) {
        Ok(())
    } else {
        Err(CliError::Usage(format!("unknown config key `{key}`")))
    }
}

/// Reads a flat TOML file into string values.
pub fn read_config_file(path: &Path) -> Result<ConfigMap, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let mut m = ConfigMap::new();
    for (k, v) in table {
        known(&k)?;
        let s = match v {
            toml::Value::String(s) => s,
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            toml::Value::Boolean(b) => b.to_string(),
            _ => return Err(CliError::Usage(format!("config key `{k}` must be a scalar"))),
        };
        m.insert(k, s);
    }
    Ok(m)
}

/// Layers profile, file, `--set` overrides and `--seed` into one complete map.
pub fn resolve(
    profile: Option<Profile>,
    file: Option<&Path>,
    sets: &[String],
    seed: Option<u64>,
) -> Result<ConfigMap, CliError> {
    let mut m = profile.map(profile_defaults).unwrap_or_default();
    if let Some(f) = file {
        m.extend(read_config_file(f)?);
    }
    apply_overrides(m, sets, seed)
}

/// Layers `--set` and `--seed` over `m` and checks that every key is present.
pub fn apply_overrides(mut m: ConfigMap, sets: &[String], seed: Option<u64>) -> Result<ConfigMap, CliError> {
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got `{s}`")))?;
        let k = k.trim();
        known(k)?;
        m.insert(k.to_string(), v.trim().to_string());
    }
    if let Some(s) = seed {
        put(&mut m, "seed", s);
    }
    if let Some((k, _)) = KEYS.iter().find(|(k, _)| !m.contains_key(*k)) {
        return Err(CliError::Usage(format!("missing config key `{k}`")));
    }
    Ok(m)
}

/// Typed view of a resolved config.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Teacher architecture; `vocab_size` is filled in from the data.
    pub teacher: ModelConfig,
    pub student_encoder_layers: usize,
    pub student_decoder_layers: usize,
    pub tokenizer: TokenizerSpec,
    pub quota: usize,
    pub train: TrainConfig,
    pub teacher_steps: u64,
    pub distill: DistillConfig,
    pub finetune_steps: u64,
    pub finetune_lr: f64,
    pub finetune_warmup_steps: u64,
}

fn get<T: FromStr>(m: &ConfigMap, k: &str) -> Result<T, CliError> {
    let v = m.get(k).ok_or_else(|| CliError::Usage(format!("missing config key `{k}`")))?;
    v.parse().map_err(|_| CliError::Usage(format!("config key `{k}`: cannot parse `{v}`")))
}

impl RunConfig {
    pub fn from_map(m: &ConfigMap) -> Result<Self, CliError> {
        let teacher = ModelConfig {
            encoder_layers: get(m, "encoder_layers")?,
            decoder_layers: get(m, "decoder_layers")?,
            emb_dim: get(m, "emb_dim")?,
            ffn_dim: get(m, "ffn_dim")?,
            num_heads: get(m, "num_heads")?,
            dropout: get(m, "dropout")?,
            attention_dropout: get(m, "attention_dropout")?,
            share_embeddings: get(m, "share_embeddings")?,
            vocab_size: 1,
            max_seq_len: get(m, "max_seq_len")?,
        };
        let train = TrainConfig {
            lr: get(m, "lr")?,
            warmup_steps: get(m, "warmup_steps")?,
            warmup_init_lr: get(m, "warmup_init_lr")?,
            adam_beta1: get(m, "adam_beta1")?,
            adam_beta2: get(m, "adam_beta2")?,
            adam_eps: get(m, "adam_eps")?,
            clip_norm: get(m, "clip_norm")?,
            label_smoothing: get(m, "label_smoothing")?,
            batch_tokens: get(m, "batch_tokens")?,
            accumulation_steps: get(m, "accumulation_steps")?,
            phase1_steps: get(m, "phase1_steps")?,
            phase2_steps: get(m, "phase2_steps")?,
            max_epochs: get(m, "max_epochs")?,
            seed: get(m, "seed")?,
            log_interval: get(m, "log_interval")?,
            checkpoint_interval: get(m, "checkpoint_interval")?,
        };
        let tokenizer: TokenizerSpec = m["tokenizer"].parse().map_err(|e| CliError::Usage(format!("{e}")))?;
        let alpha_mode: AlphaMode = m["alpha_mode"].parse().map_err(|e| CliError::Usage(format!("{e}")))?;
        let distill = DistillConfig {
            alpha_mode,
            alpha_init: get(m, "alpha_init")?,
            label_smoothing: train.label_smoothing,
        };
        let cfg = Self {
            teacher,
            student_encoder_layers: get(m, "student_encoder_layers")?,
            student_decoder_layers: get(m, "student_decoder_layers")?,
            tokenizer,
            quota: get(m, "quota")?,
            train,
            teacher_steps: get(m, "teacher_steps")?,
            distill,
            finetune_steps: get(m, "finetune_steps")?,
            finetune_lr: get(m, "finetune_lr")?,
            finetune_warmup_steps: get(m, "finetune_warmup_steps")?,
        };
        let usage = |e: distillmt_core::Error| CliError::Usage(e.to_string());
        cfg.teacher.validate().map_err(usage)?;
        cfg.student(1).validate().map_err(usage)?;
        cfg.train.validate().map_err(usage)?;
        cfg.distill.validate().map_err(usage)?;
        if cfg.quota == 0 {
            return Err(CliError::Usage("quota must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn teacher(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            ..self.teacher.clone()
        }
    }

    pub fn student(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            encoder_layers: self.student_encoder_layers,
            decoder_layers: self.student_decoder_layers,
            vocab_size,
            ..self.teacher.clone()
        }
    }

    /// Schedule for teacher training.
    pub fn teacher_train(&self) -> TrainConfig {
        let mut t = self.train.clone();
        if self.teacher_steps > 0 {
            t.phase1_steps = self.teacher_steps;
            t.phase2_steps = 0;
        }
        t
    }

    pub fn finetune_train(&self) -> TrainConfig {
        TrainConfig {
            lr: self.finetune_lr,
            warmup_steps: self.finetune_warmup_steps,
            ..self.train.clone()
        }
    }
}
