use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use distillmt_core::data::{
    balance_all, build_vocabulary, parse_synth_spec, prepare_corpora, read_corpus_dir, read_resources, split_of,
    synthesize_toy_corpus, write_tsv, Direction, DirectionCorpus, PreparedPair, Split, TokenizerSpec, Vocabulary,
};
use distillmt_core::decoding::DecodeConfig;
use distillmt_core::evaluation::{
    build_report, evaluate_model, format_score_tsv, measure_latency, parse_score_tsv, speed_ratio,
};
use distillmt_core::model::{init_student_from_teacher, param_count, write_atomic, Checkpoint, Model};
use distillmt_core::training::{
    distill, finetune, train_supervised, train_supervised_from, LogRecord, TrainObserver, TrainState,
};
use serde_json::json;

use crate::config::{apply_overrides, resolve, ConfigMap, RunConfig};
use crate::manifest::RunManifest;
use crate::{CliError, Command, ConfigArgs, DecodeArgs};

pub fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Synth { spec, out, seed } => cmd_synth(&spec, &out, seed),
        Command::TrainTeacher { cfg, data, out } => cmd_train_teacher(&cfg, data, out),
        Command::Distill { cfg, teacher, data, out } => cmd_distill(&cfg, teacher, data, out),
        Command::TrainBaseline {
            cfg,
            init_from,
            data,
            out,
        } => cmd_train_baseline(&cfg, init_from, data, out),
        Command::Finetune {
            cfg,
            checkpoint,
            data,
            direction,
            steps,
            out,
        } => cmd_finetune(&cfg, checkpoint, data, direction, steps, out),
        Command::Evaluate {
            checkpoint,
            data,
            split,
            decode,
            out,
        } => cmd_evaluate(&checkpoint, &data, &split, &decode, &out),
        Command::Report {
            scores,
            resources,
            reference,
            filter_floor,
            all_cells,
            name,
        } => cmd_report(&scores, &resources, reference.as_deref(), filter_floor, all_cells, &name),
        Command::Bench {
            checkpoints,
            data,
            split,
            sentences,
            warmup,
            reps,
            beam,
            reference,
        } => cmd_bench(&checkpoints, &data, &split, sentences, warmup, reps, beam, reference),
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn require_exists(p: &Path, what: &str) -> Result<(), CliError> {
    if p.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} does not exist", p.display())))
    }
}

/// `dir/<split>` when it exists, else `dir` itself.
fn split_dir(dir: &Path, split: &str) -> PathBuf {
    let sub = dir.join(split);
    if sub.is_dir() {
        sub
    } else {
        dir.to_path_buf()
    }
}

fn read_split(dir: &Path, split: &str) -> Result<Vec<DirectionCorpus>, CliError> {
    require_exists(dir, "data directory")?;
    Ok(read_corpus_dir(&split_dir(dir, split))?)
}

// ---------------------------------------------------------------------------
// synth

pub fn cmd_synth(spec_path: &Path, out: &Path, seed: u64) -> Result<(), CliError> {
    let mut manifest = RunManifest::new("synth");
    let text = fs::read_to_string(spec_path)
        .map_err(|e| CliError::Usage(format!("cannot read spec {}: {e}", spec_path.display())))?;
    let spec = parse_synth_spec(&text)?;
    let corpora = synthesize_toy_corpus(&spec, seed)?;
    for c in &corpora {
        let name = format!("{}.tsv", c.direction);
        write_tsv(&out.join("corpus").join(&name), &c.pairs)?;
        let mut parts: BTreeMap<Split, Vec<_>> = BTreeMap::new();
        for p in &c.pairs {
            parts.entry(split_of(&p.src)).or_default().push(p.clone());
        }
        for split in [Split::Train, Split::Dev, Split::Test] {
            let pairs = parts.remove(&split).unwrap_or_default();
            let path = out.join(split.name()).join(&name);
            write_tsv(&path, &pairs)?;
            manifest.outputs.insert(format!("{}/{}", split.name(), c.direction), path_str(&path));
        }
    }
    manifest.seed = Some(seed);
    manifest.inputs.insert("spec".into(), path_str(spec_path));
    manifest.finish_and_write(&out.join("synth"))?;
    eprintln!("wrote {} directions to {}", corpora.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// training commands

struct Resolved {
    map: ConfigMap,
    cfg: RunConfig,
    replay: Option<RunManifest>,
}

fn resolve_config(args: &ConfigArgs, command: &str) -> Result<Resolved, CliError> {
    let (map, replay) = match &args.manifest {
        Some(path) => {
            let m = RunManifest::load(path)?;
            if m.command != command {
                return Err(CliError::Usage(format!(
                    "manifest {} records `{}`, not `{command}`",
                    path.display(),
                    m.command
                )));
            }
            let recorded = m.config.clone().ok_or_else(|| CliError::Usage("manifest has no config".into()))?;
            let map = apply_overrides(recorded, &args.sets, args.seed)?;
            (map, Some(m))
        }
        None => {
            if args.profile.is_none() && args.config.is_none() {
                return Err(CliError::Usage("give --config, --profile or --manifest".into()));
            }
            (resolve(args.profile, args.config.as_deref(), &args.sets, args.seed)?, None)
        }
    };
    let cfg = RunConfig::from_map(&map)?;
    Ok(Resolved { map, cfg, replay })
}

impl Resolved {
    /// A flag value, or the one recorded in the replayed manifest.
    fn input(&self, flag: Option<PathBuf>, key: &str) -> Result<PathBuf, CliError> {
        self.pick(flag, key, |m| &m.inputs)
    }

    fn output(&self, flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
        self.pick(flag, "checkpoint", |m| &m.outputs)
    }

    fn pick(
        &self,
        flag: Option<PathBuf>,
        key: &str,
        field: impl Fn(&RunManifest) -> &BTreeMap<String, String>,
    ) -> Result<PathBuf, CliError> {
        flag.or_else(|| self.replay.as_ref().and_then(|m| field(m).get(key)).map(PathBuf::from))
            .ok_or_else(|| CliError::Usage(format!("missing --{}", if key == "checkpoint" { "out" } else { key })))
    }

    fn manifest(&self, command: &str) -> RunManifest {
        let mut m = RunManifest::new(command);
        m.config = Some(self.map.clone());
        m.seed = Some(self.cfg.train.seed);
        m
    }
}

/// Logs to stderr and `<out>.log`, and writes intermediate checkpoints.
struct FileObserver {
    log: File,
    out: PathBuf,
    vocab: Vocabulary,
    metadata: BTreeMap<String, serde_json::Value>,
}

impl FileObserver {
    fn new(out: &Path, vocab: &Vocabulary, metadata: BTreeMap<String, serde_json::Value>) -> Result<Self, CliError> {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| CliError::Runtime(format!("{}: {e}", parent.display())))?;
        }
        let mut log_path = out.as_os_str().to_owned();
        log_path.push(".log");
        let log = File::create(&log_path).map_err(|e| CliError::Runtime(format!("{}: {e}", log_path.to_string_lossy())))?;
        Ok(Self {
            log,
            out: out.to_path_buf(),
            vocab: vocab.clone(),
            metadata,
        })
    }

    fn checkpoint(&self, state: &TrainState) -> Checkpoint {
        let mut metadata = self.metadata.clone();
        metadata.insert("step".into(), json!(state.step));
        metadata.insert("alpha_param".into(), json!(state.alpha_param));
        Checkpoint {
            model: state.model.clone(),
            vocab: self.vocab.clone(),
            metadata,
        }
    }
}

impl TrainObserver for FileObserver {
    fn on_log(&mut self, record: &LogRecord) {
        eprintln!("{record}");
        let _ = writeln!(self.log, "{record}");
    }

    fn on_checkpoint(&mut self, state: &TrainState) -> distillmt_core::Result<()> {
        self.checkpoint(state).save(&self.out)
    }
}

fn base_metadata(role: &str, tokenizer: TokenizerSpec) -> BTreeMap<String, serde_json::Value> {
    BTreeMap::from([
        ("role".to_string(), json!(role)),
        ("tokenizer".to_string(), json!(tokenizer.to_string())),
    ])
}

fn tokenizer_of(ck: &Checkpoint) -> Result<TokenizerSpec, CliError> {
    match ck.metadata.get("tokenizer").and_then(|v| v.as_str()) {
        Some(s) => Ok(s.parse()?),
        None => Ok(TokenizerSpec::Whitespace),
    }
}

fn load_checkpoint(path: &Path, what: &str) -> Result<Checkpoint, CliError> {
    require_exists(path, what)?;
    Ok(Checkpoint::load(path)?)
}

/// Balanced, prepared training pairs.
fn training_pairs(
    data: &Path,
    cfg: &RunConfig,
    vocab: &Vocabulary,
    tokenizer: TokenizerSpec,
) -> Result<Vec<PreparedPair>, CliError> {
    let corpora = read_split(data, "train")?;
    let balanced = balance_all(&corpora, cfg.quota, cfg.train.seed)?;
    Ok(prepare_corpora(&balanced, tokenizer, vocab)?)
}

fn finish_training(
    obs: &FileObserver,
    state: &TrainState,
    out: &Path,
    mut manifest: RunManifest,
) -> Result<(), CliError> {
    obs.checkpoint(state).save(out)?;
    manifest.outputs.insert("checkpoint".into(), path_str(out));
    manifest.finish_and_write(out)?;
    eprintln!("wrote {} ({} parameters)", out.display(), param_count(&state.model));
    Ok(())
}

pub fn cmd_train_teacher(args: &ConfigArgs, data: Option<PathBuf>, out: Option<PathBuf>) -> Result<(), CliError> {
    let r = resolve_config(args, "train-teacher")?;
    let (data, out) = (r.input(data, "data")?, r.output(out)?);
    let corpora = read_split(&data, "train")?;
    let vocab = build_vocabulary(&corpora, r.cfg.tokenizer);
    let pairs = training_pairs(&data, &r.cfg, &vocab, r.cfg.tokenizer)?;
    let mut obs = FileObserver::new(&out, &vocab, base_metadata("teacher", r.cfg.tokenizer))?;
    let state = train_supervised(&r.cfg.teacher(vocab.len()), &pairs, &r.cfg.teacher_train(), &mut obs)?;
    let mut m = r.manifest("train-teacher");
    m.inputs.insert("data".into(), path_str(&data));
    finish_training(&obs, &state, &out, m)
}

pub fn cmd_distill(
    args: &ConfigArgs,
    teacher: Option<PathBuf>,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let r = resolve_config(args, "distill")?;
    let (teacher_path, data, out) = (r.input(teacher, "teacher")?, r.input(data, "data")?, r.output(out)?);
    let t = load_checkpoint(&teacher_path, "teacher checkpoint")?;
    let tok = tokenizer_of(&t)?;
    let pairs = training_pairs(&data, &r.cfg, &t.vocab, tok)?;
    let student_cfg = r.cfg.student(t.vocab.len());
    let mut obs = FileObserver::new(&out, &t.vocab, base_metadata("student", tok))?;
    let state = distill(&t.model, &student_cfg, &pairs, &r.cfg.train, &r.cfg.distill, &mut obs)?;
    obs.metadata
        .insert("alpha".into(), json!(r.cfg.distill.effective_alpha(state.alpha_param)));
    let mut m = r.manifest("distill");
    m.inputs.insert("teacher".into(), path_str(&teacher_path));
    m.inputs.insert("data".into(), path_str(&data));
    finish_training(&obs, &state, &out, m)
}

pub fn cmd_train_baseline(
    args: &ConfigArgs,
    init_from: Option<PathBuf>,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let r = resolve_config(args, "train-baseline")?;
    let (data, out) = (r.input(data, "data")?, r.output(out)?);
    let init_from = init_from.or_else(|| r.replay.as_ref().and_then(|m| m.inputs.get("init_from")).map(PathBuf::from));
    let mut m = r.manifest("train-baseline");
    let (state, obs) = match &init_from {
        Some(path) => {
            let t = load_checkpoint(path, "init checkpoint")?;
            let tok = tokenizer_of(&t)?;
            let pairs = training_pairs(&data, &r.cfg, &t.vocab, tok)?;
            let student = init_student_from_teacher(&t.model, &r.cfg.student(t.vocab.len()))?;
            let mut obs = FileObserver::new(&out, &t.vocab, base_metadata("baseline", tok))?;
            m.inputs.insert("init_from".into(), path_str(path));
            (train_supervised_from(student, &pairs, &r.cfg.train, &mut obs)?, obs)
        }
        None => {
            let tok = r.cfg.tokenizer;
            let vocab = build_vocabulary(&read_split(&data, "train")?, tok);
            let pairs = training_pairs(&data, &r.cfg, &vocab, tok)?;
            let mut obs = FileObserver::new(&out, &vocab, base_metadata("baseline", tok))?;
            (train_supervised(&r.cfg.student(vocab.len()), &pairs, &r.cfg.train, &mut obs)?, obs)
        }
    };
    m.inputs.insert("data".into(), path_str(&data));
    finish_training(&obs, &state, &out, m)
}

pub fn cmd_finetune(
    args: &ConfigArgs,
    checkpoint: Option<PathBuf>,
    data: Option<PathBuf>,
    direction: Option<String>,
    steps: Option<u64>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let r = resolve_config(args, "finetune")?;
    let (ck_path, data, out) = (r.input(checkpoint, "checkpoint")?, r.input(data, "data")?, r.output(out)?);
    let option = |k: &str| r.replay.as_ref().and_then(|m| m.options.get(k)).cloned();
    let direction: Direction = direction
        .or_else(|| option("direction"))
        .ok_or_else(|| CliError::Usage("missing --direction".into()))?
        .parse()?;
    let steps = match steps.or_else(|| option("steps").and_then(|s| s.parse().ok())) {
        Some(s) => s,
        None => r.cfg.finetune_steps,
    };
    let ck = load_checkpoint(&ck_path, "checkpoint")?;
    let tok = tokenizer_of(&ck)?;
    let corpus = read_split(&data, "train")?
        .into_iter()
        .find(|c| c.direction == direction)
        .ok_or_else(|| CliError::Usage(format!("no training data for direction {direction}")))?;
    let balanced = balance_all(&[corpus], r.cfg.quota, r.cfg.train.seed)?;
    let pairs = prepare_corpora(&balanced, tok, &ck.vocab)?;
    let mut meta = ck.metadata.clone();
    meta.insert("finetuned_on".into(), json!(direction.to_string()));
    let mut obs = FileObserver::new(&out, &ck.vocab, meta)?;
    let state = finetune(ck.model, &pairs, &r.cfg.finetune_train(), steps, &mut obs)?;
    let mut m = r.manifest("finetune");
    m.inputs.insert("checkpoint".into(), path_str(&ck_path));
    m.inputs.insert("data".into(), path_str(&data));
    m.options.insert("direction".into(), direction.to_string());
    m.options.insert("steps".into(), steps.to_string());
    finish_training(&obs, &state, &out, m)
}

// ---------------------------------------------------------------------------
// evaluation commands

fn decode_config(a: &DecodeArgs) -> Result<DecodeConfig, CliError> {
    if a.beam == 0 {
        return Err(CliError::Usage("--beam must be at least 1".into()));
    }
    Ok(DecodeConfig {
        beam_size: a.beam,
        length_penalty: a.length_penalty,
        max_len: a.max_len,
    })
}

pub fn cmd_evaluate(checkpoint: &Path, data: &Path, split: &str, decode: &DecodeArgs, out: &Path) -> Result<(), CliError> {
    let mut manifest = RunManifest::new("evaluate");
    let ck = load_checkpoint(checkpoint, "checkpoint")?;
    let tok = tokenizer_of(&ck)?;
    let corpora = read_split(data, split)?;
    let cfg = decode_config(decode)?;
    let scores = evaluate_model(&ck.model, &ck.vocab, &corpora, tok, &cfg)?;
    let flat: BTreeMap<Direction, f64> = scores.iter().map(|(d, b)| (d.clone(), b.score)).collect();
    write_atomic(out, format_score_tsv(&flat).as_bytes())?;
    for (d, b) in &scores {
        eprintln!("{d}\tBLEU={:.2}\tBP={:.4}\thyp_len={}\tref_len={}", b.score, b.brevity_penalty, b.hyp_len, b.ref_len);
    }
    manifest.inputs.insert("checkpoint".into(), path_str(checkpoint));
    manifest.inputs.insert("data".into(), path_str(&split_dir(data, split)));
    manifest.options.insert("beam".into(), cfg.beam_size.to_string());
    manifest.options.insert("length_penalty".into(), cfg.length_penalty.to_string());
    if let Some(l) = cfg.max_len {
        manifest.options.insert("max_len".into(), l.to_string());
    }
    manifest.outputs.insert("scores".into(), path_str(out));
    manifest.finish_and_write(out)
}

fn read_scores(path: &Path) -> Result<BTreeMap<Direction, f64>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(parse_score_tsv(&text)?)
}

pub fn cmd_report(
    scores: &Path,
    resources: &Path,
    reference: Option<&Path>,
    filter_floor: f64,
    all_cells: bool,
    name: &str,
) -> Result<(), CliError> {
    let s = read_scores(scores)?;
    require_exists(resources, "resources file")?;
    let res = read_resources(resources)?;
    let reference = reference.map(read_scores).transpose()?;
    let report = build_report(&s, &res, reference.as_ref(), filter_floor, all_cells)?;
    print!("{}", report.to_table(name));
    println!("{}", report.to_kv_line());
    for d in &report.excluded {
        eprintln!("excluded {d} (reference score at or below {filter_floor})");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_bench(
    checkpoints: &[String],
    data: &Path,
    split: &str,
    sentences: usize,
    warmup: usize,
    reps: usize,
    beam: usize,
    reference: Option<String>,
) -> Result<(), CliError> {
    let mut models: Vec<(String, Checkpoint)> = Vec::new();
    for spec in checkpoints {
        let (name, path) = match spec.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(spec);
                let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| spec.clone());
                (stem, p)
            }
        };
        if models.iter().any(|(n, _)| *n == name) {
            return Err(CliError::Usage(format!("duplicate model name `{name}`")));
        }
        models.push((name, load_checkpoint(&path, "checkpoint")?));
    }
    let reference = reference.unwrap_or_else(|| models[0].0.clone());
    let corpora = read_split(data, split)?;
    let cfg = DecodeConfig {
        beam_size: beam.max(1),
        ..DecodeConfig::default()
    };
    let mut latencies = BTreeMap::new();
    let mut rows = Vec::new();
    for (name, ck) in &models {
        let tok = tokenizer_of(ck)?;
        let pairs = prepare_corpora(&corpora, tok, &ck.vocab)?;
        let sources: Vec<_> = pairs.into_iter().take(sentences).map(|p| p.source).collect();
        let m = measure_latency(&ck.model, &sources, &cfg, warmup, reps)?;
        if !m.outputs_stable {
            return Err(CliError::Runtime(format!("{name}: outputs changed between timing reps")));
        }
        latencies.insert(name.clone(), m.seconds_per_sentence);
        rows.push((name.clone(), model_shape(&ck.model)));
    }
    let ratios = speed_ratio(&latencies, &reference)?;
    println!("{:<16} {:>10} {:>7} {:>12} {:>8}", "model", "params", "layers", "ms/sentence", "speed");
    for (name, (params, layers)) in rows {
        println!(
            "{name:<16} {params:>10} {layers:>7} {:>12.3} {:>7.2}x",
            latencies[&name] * 1e3,
            ratios[&name]
        );
    }
    Ok(())
}

fn model_shape(m: &Model) -> (usize, String) {
    (param_count(m), format!("{}/{}", m.config.encoder_layers, m.config.decoder_layers))
}
