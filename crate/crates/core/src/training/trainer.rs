use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use distillmt_autodiff::{kernels, Tape, Tensor};

use super::batching::BatchStream;
use super::config::{lr_at, TrainConfig};
use super::optim::{Adam, ParamSlot};
use crate::data::{PreparedPair, TokenId, BOS};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::losses::{ce_from_log_probs, kd_from_log_probs, total_loss, AlphaMode, DistillConfig, LossBundle};
use crate::model::{init_student_from_teacher, Mode, Model, ModelConfig};

/// Everything a training run mutates.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub model: Model,
    /// Raw α parameter; see [`DistillConfig::effective_alpha`].
    pub alpha_param: f64,
    pub optimizer: Adam,
}

impl TrainState {
    pub fn new(model: Model, alpha_param: f64) -> Self {
        Self {
            step: 0,
            model,
            alpha_param,
            optimizer: Adam::new(),
        }
    }
}

/// One training-log line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: LossBundle,
    pub tokens_per_sec: f64,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step={} lr={:.6e} ce={:.6} kd={:.6} alpha={:.6} total={:.6} tokens_per_sec={:.1}",
            self.step, self.lr, self.loss.ce, self.loss.kd, self.loss.alpha, self.loss.total, self.tokens_per_sec
        )
    }
}

/// Hooks a training loop calls; both default to doing nothing.
pub trait TrainObserver {
    fn on_log(&mut self, _record: &LogRecord) {}
    fn on_checkpoint(&mut self, _state: &TrainState) -> Result<()> {
        Ok(())
    }
}

pub struct NoObserver;

impl TrainObserver for NoObserver {}

/// Decoder input for a target: `<bos>` followed by all but the last token.
pub fn shift_right(target: &[TokenId]) -> Vec<TokenId> {
    let mut v = Vec::with_capacity(target.len());
    v.push(BOS);
    v.extend_from_slice(&target[..target.len().saturating_sub(1)]);
    v
}

/// Teacher next-token distributions for a packed batch, computed without
/// dropout or gradient.
pub fn teacher_probs(teacher: &Model, sources: &[&[TokenId]], target_inputs: &[&[TokenId]]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let p = teacher.bind(&mut tape, false);
    let logits = teacher.forward_batch(&mut tape, &p, sources, target_inputs, Mode::Eval)?;
    let mut q = tape.value(logits).clone();
    let k = q.cols();
    for row in q.data_mut().chunks_exact_mut(k) {
        kernels::softmax_in_place(row);
    }
    Ok(q)
}

struct Distill<'a> {
    teacher: &'a Model,
    cfg: &'a DistillConfig,
}

/// Which loss a step optimizes.
#[derive(Clone, Copy)]
enum Objective<'a> {
    Ce { label_smoothing: f64 },
    Kd(&'a Distill<'a>),
}

/// Runs one optimizer step over `batches`, losses averaged over all their
/// sentences.
fn train_step(
    state: &mut TrainState,
    data: &[PreparedPair],
    batches: &[Vec<usize>],
    cfg: &TrainConfig,
    objective: Objective<'_>,
) -> Result<(LossBundle, usize)> {
    let step = state.step + 1;
    let n: usize = batches.iter().map(Vec::len).sum();
    let inv_n = 1.0 / n as f64;
    let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut alpha_grad = 0.0;
    let mut bundle = LossBundle {
        ce: 0.0,
        kd: 0.0,
        alpha: 0.0,
        total: 0.0,
    };
    let mut tokens = 0;
    for (m, batch) in batches.iter().enumerate() {
        let sources: Vec<&[TokenId]> = batch.iter().map(|&i| data[i].source.as_slice()).collect();
        let inputs: Vec<Vec<TokenId>> = batch.iter().map(|&i| shift_right(&data[i].target)).collect();
        let inputs: Vec<&[TokenId]> = inputs.iter().map(Vec::as_slice).collect();
        let gold: Vec<TokenId> = batch.iter().flat_map(|&i| data[i].target.iter().copied()).collect();
        tokens += gold.len() + sources.iter().map(|s| s.len()).sum::<usize>();

        let model = &state.model;
        let mode = if model.config.dropout > 0.0 || model.config.attention_dropout > 0.0 {
            Mode::Train {
                seed: derive_seed(cfg.seed, &format!("dropout/{step}/{m}")),
            }
        } else {
            Mode::Eval
        };
        let mut tape = Tape::new();
        let pv = model.bind(&mut tape, true);
        let logits = model.forward_batch(&mut tape, &pv, &sources, &inputs, mode)?;
        let lp = tape.log_softmax(logits);
        let (total, alpha_var, b) = match objective {
            Objective::Ce { label_smoothing } => {
                let ce = ce_from_log_probs(&mut tape, lp, &gold, label_smoothing)?;
                let ce = tape.scale(ce, inv_n);
                let v = tape.value(ce).data()[0];
                (
                    ce,
                    None,
                    LossBundle {
                        ce: v,
                        kd: 0.0,
                        alpha: 0.0,
                        total: v,
                    },
                )
            }
            Objective::Kd(d) => {
                let ce = ce_from_log_probs(&mut tape, lp, &gold, d.cfg.label_smoothing)?;
                let ce = tape.scale(ce, inv_n);
                let q = teacher_probs(d.teacher, &sources, &inputs)?;
                let kd = kd_from_log_probs(&mut tape, lp, &q)?;
                let kd = tape.scale(kd, inv_n);
                let alpha = tape.leaf(
                    Tensor::scalar(state.alpha_param),
                    d.cfg.alpha_mode == AlphaMode::Trainable,
                );
                let (total, b) = total_loss(&mut tape, ce, kd, alpha, d.cfg)?;
                (total, Some(alpha), b)
            }
        };
        bundle.ce += b.ce;
        bundle.kd += b.kd;
        bundle.total += b.total;
        bundle.alpha = b.alpha;

        let mut grads = tape.backward(total)?;
        for (name, var) in pv.iter() {
            let Some(g) = grads.take(var) else { continue };
            match acc.get_mut(name) {
                Some(a) => a.iter_mut().zip(&g).for_each(|(a, g)| *a += g),
                None => {
                    acc.insert(name.to_string(), g);
                }
            }
        }
        if let Some(g) = alpha_var.and_then(|a| grads.get(a)) {
            alpha_grad += g[0];
        }
    }

    if !bundle.total.is_finite() {
        return Err(Error::Training(format!("non-finite loss {} at step {step}", bundle.total)));
    }
    let lr = lr_at(step, cfg);
    let train_alpha = matches!(objective, Objective::Kd(d) if d.cfg.alpha_mode == AlphaMode::Trainable);
    let alpha_g = [alpha_grad];
    let mut alpha_v = [state.alpha_param];
    {
        let mut slots: Vec<ParamSlot<'_>> = Vec::with_capacity(acc.len() + 1);
        for (name, t) in state.model.params.iter_mut() {
            if let Some(g) = acc.get(name) {
                slots.push(ParamSlot {
                    name,
                    value: t.data_mut(),
                    grad: g,
                });
            }
        }
        if train_alpha {
            slots.push(ParamSlot {
                name: "alpha",
                value: &mut alpha_v,
                grad: &alpha_g,
            });
        }
        state.optimizer.step(&mut slots, lr, cfg)?;
    }
    state.alpha_param = alpha_v[0];
    state.step = step;
    Ok((bundle, tokens))
}

struct Loop<'a, 'o> {
    data: &'a [PreparedPair],
    cfg: &'a TrainConfig,
    stream: BatchStream<'a>,
    observer: &'o mut dyn TrainObserver,
    since_log: (Instant, usize),
}

impl<'a, 'o> Loop<'a, 'o> {
    fn new(data: &'a [PreparedPair], cfg: &'a TrainConfig, observer: &'o mut dyn TrainObserver) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            data,
            cfg,
            stream: BatchStream::new(data, cfg.batch_tokens, cfg.seed)?,
            observer,
            since_log: (Instant::now(), 0),
        })
    }

    fn run(&mut self, state: &mut TrainState, steps: u64, objective: Objective<'_>) -> Result<()> {
        let end = state.step + steps;
        while state.step < end {
            if self.cfg.max_epochs > 0 && self.stream.epochs_done() >= self.cfg.max_epochs {
                break;
            }
            let batches: Vec<Vec<usize>> = (0..self.cfg.accumulation_steps)
                .map(|_| self.stream.next_batch().to_vec())
                .collect();
            let (loss, tokens) = train_step(state, self.data, &batches, self.cfg, objective)?;
            self.since_log.1 += tokens;
            let s = state.step;
            if self.cfg.log_interval > 0 && (s % self.cfg.log_interval == 0 || s == end) {
                let secs = self.since_log.0.elapsed().as_secs_f64().max(1e-9);
                self.observer.on_log(&LogRecord {
                    step: s,
                    lr: lr_at(s, self.cfg),
                    loss,
                    tokens_per_sec: self.since_log.1 as f64 / secs,
                });
                self.since_log = (Instant::now(), 0);
            }
            if self.cfg.checkpoint_interval > 0 && s % self.cfg.checkpoint_interval == 0 {
                self.observer.on_checkpoint(state)?;
            }
        }
        Ok(())
    }
}

/// CE-only training from a fresh, seeded initialization, for
/// `phase1_steps + phase2_steps` steps.
pub fn train_supervised(
    model_cfg: &ModelConfig,
    data: &[PreparedPair],
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainState> {
    let model = Model::new(model_cfg.clone(), derive_seed(cfg.seed, "init"))?;
    train_supervised_from(model, data, cfg, observer)
}

/// CE-only training starting from `model`.
pub fn train_supervised_from(
    model: Model,
    data: &[PreparedPair],
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainState> {
    let mut state = TrainState::new(model, 0.0);
    let mut lp = Loop::new(data, cfg, observer)?;
    lp.run(
        &mut state,
        cfg.total_steps(),
        Objective::Ce {
            label_smoothing: cfg.label_smoothing,
        },
    )?;
    Ok(state)
}

/// Two-phase distillation: `phase1_steps` of CE, then `phase2_steps` of
/// CE + α·KD against the frozen teacher. The student starts from the
/// teacher's leading layers and the last step's parameters are returned.
pub fn distill(
    teacher: &Model,
    student_cfg: &ModelConfig,
    data: &[PreparedPair],
    cfg: &TrainConfig,
    dcfg: &DistillConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainState> {
    dcfg.validate()?;
    let student = init_student_from_teacher(teacher, student_cfg)?;
    let mut state = TrainState::new(student, dcfg.initial_alpha_param());
    let mut lp = Loop::new(data, cfg, observer)?;
    lp.run(
        &mut state,
        cfg.phase1_steps,
        Objective::Ce {
            label_smoothing: dcfg.label_smoothing,
        },
    )?;
    let d = Distill { teacher, cfg: dcfg };
    lp.run(&mut state, cfg.phase2_steps, Objective::Kd(&d))?;
    Ok(state)
}

/// CE-only updates on a single direction with a fresh optimizer.
pub fn finetune(
    model: Model,
    data: &[PreparedPair],
    cfg: &TrainConfig,
    steps: u64,
    observer: &mut dyn TrainObserver,
) -> Result<TrainState> {
    if let Some(first) = data.first() {
        if let Some(other) = data.iter().find(|p| p.direction != first.direction) {
            return Err(Error::Data(format!(
                "finetune data mixes directions {} and {}",
                first.direction, other.direction
            )));
        }
    }
    let mut state = TrainState::new(model, 0.0);
    if steps == 0 {
        return Ok(state);
    }
    let mut lp = Loop::new(data, cfg, observer)?;
    lp.run(
        &mut state,
        steps,
        Objective::Ce {
            label_smoothing: cfg.label_smoothing,
        },
    )?;
    Ok(state)
}
