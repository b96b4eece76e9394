//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test -p distillmt-cli --test acceptance -- 1 5 10` runs a subset.
//! The toolkit models (criteria 7 to 9) take most of the time. Failures are
//! always printed; set `DISTILLMT_ACCEPTANCE_STRICT=1` to also exit nonzero.

#[allow(dead_code)]
mod common;
#[allow(dead_code)]
#[path = "../../core/tests/common/decode_cases.rs"]
mod decode_cases;
#[allow(dead_code)]
#[path = "../../core/tests/common/loss_cases.rs"]
mod loss_cases;
#[allow(dead_code)]
#[path = "../../autodiff/tests/common/op_cases.rs"]
mod op_cases;
#[allow(dead_code)]
#[path = "../../core/tests/common/report_fixture.rs"]
mod report_fixture;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::time::{Duration, Instant};

use distillmt_core::data::{
    balance, balance_all, build_vocabulary, classify_resource, pair_category, parse_resources, parse_synth_spec,
    prepare_corpora, synthesize_toy_corpus, Direction, DirectionCorpus, LanguageResourceEntry, PreparedPair,
    ResourceCategory, TokenizerSpec, TranslationPair,
};
use distillmt_core::decoding::{beam_decode, beam_search, greedy_decode, DecodeConfig};
use distillmt_core::evaluation::{build_report, corpus_bleu, evaluate_prepared, measure_latency, parse_score_tsv};
use distillmt_core::losses::DistillConfig;
use distillmt_core::model::{init_student_from_teacher, Model, ModelConfig};
use distillmt_core::training::{distill, finetune, train_supervised, train_supervised_from, NoObserver, TrainConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn median3(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

fn c1_loss_identities() -> Verdict {
    let gap = (0..1000).map(loss_cases::identity_gap).fold(0.0, f64::max);
    let slack = (0..1000)
        .map(|s| {
            let (kd, h) = loss_cases::gibbs_pair(10_000 + s);
            kd - h
        })
        .fold(f64::INFINITY, f64::min);
    check(
        gap <= 1e-12 && slack >= -1e-12,
        format!("max |kd(onehot) - ce| = {gap:.2e}, min kd - H(q) = {slack:.3e}"),
    )
}

fn c2_gradients() -> Verdict {
    let mut worst = ("", 0.0f64);
    for op in op_cases::OPS {
        for trial in 0..100 {
            let case = op_cases::make_case(op, 50_000 + trial);
            let e = distillmt_autodiff::grad_check(&case.f, &case.input, 1e-6).map_err(|e| format!("{op}: {e}"))?;
            if e > worst.1 {
                worst = (op, e);
            }
        }
    }
    let mut worst_loss = ("", 0.0f64);
    for case in loss_cases::GRAD_CASES {
        for seed in 0..100 {
            let e = loss_cases::loss_grad_error(case, 70_000 + seed);
            if e > worst_loss.1 {
                worst_loss = (case, e);
            }
        }
    }
    check(
        worst.1 <= 1e-4 && worst_loss.1 <= 1e-4,
        format!(
            "{} ops and {} loss paths x 100 trials; worst op {} {:.1e}, worst loss {} {:.1e}",
            op_cases::OPS.len(),
            loss_cases::GRAD_CASES.len(),
            worst.0,
            worst.1,
            worst_loss.0,
            worst_loss.1
        ),
    )
}

fn corpus_of(n: usize) -> DirectionCorpus {
    let pairs = (0..n)
        .map(|i| TranslationPair {
            src_lang: "en".into(),
            tgt_lang: "fr".into(),
            src: format!("s{i}"),
            tgt: format!("t{i}"),
        })
        .collect();
    DirectionCorpus::new(Direction::new("en", "fr"), pairs).unwrap()
}

fn c3_balance() -> Verdict {
    let mut notes = Vec::new();
    for n in [1, 99, 100, 101, 1000] {
        let c = corpus_of(n);
        let b = balance(&c, 100, 7).map_err(|e| e.to_string())?;
        if b.len() != 100 {
            return Err(format!("size {n}: got {} pairs", b.len()));
        }
        let mut counts: HashMap<&str, usize> = c.pairs.iter().map(|p| (p.src.as_str(), 0)).collect();
        for p in &b.pairs {
            *counts.get_mut(p.src.as_str()).ok_or(format!("size {n}: foreign pair {}", p.src))? += 1;
        }
        let (lo, hi) = (*counts.values().min().unwrap(), *counts.values().max().unwrap());
        if n <= 100 && (lo == 0 || hi - lo > 1) {
            return Err(format!("size {n}: multiplicities {lo}..{hi}"));
        }
        if n > 100 && hi > 1 {
            return Err(format!("size {n}: a pair was drawn twice"));
        }
        if balance(&c, 100, 7).unwrap() != b {
            return Err(format!("size {n}: same seed gave different samples"));
        }
        notes.push(format!("{n}:{lo}-{hi}"));
    }
    let big = corpus_of(1000);
    if balance(&big, 100, 7).unwrap() == balance(&big, 100, 8).unwrap() {
        return Err("different seeds gave the same sample".into());
    }
    Ok(format!("quota 100 exact; multiplicity ranges {}", notes.join(" ")))
}

fn c4_categories() -> Verdict {
    use ResourceCategory::*;
    let rows = [
        (0, VeryLow),
        (100_000, VeryLow),
        (100_001, Low),
        (1_000_000, Low),
        (1_000_001, Medium),
        (5_000_000, Medium),
        (100_000_000, Medium),
        (100_000_001, High),
        (200_000_000, High),
    ];
    for (size, want) in rows {
        let got = classify_resource(&LanguageResourceEntry {
            language: "xx".into(),
            size_to_from_english: size,
        });
        if got != want {
            return Err(format!("{size} classified as {got:?}, expected {want:?}"));
        }
    }
    let rank = |c: ResourceCategory| [VeryLow, Low, Medium, High].iter().position(|&x| x == c).unwrap();
    let mut pairs = 0;
    for a in ResourceCategory::ALL {
        for b in ResourceCategory::ALL {
            let want = if rank(a) <= rank(b) { a } else { b };
            if pair_category(a, b) != want {
                return Err(format!("pair_category({a:?}, {b:?}) = {:?}", pair_category(a, b)));
            }
            pairs += 1;
        }
    }
    Ok(format!("{} sizes across all four rows, {pairs} category pairs", rows.len()))
}

fn c5_bleu() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let refs: Vec<Vec<u32>> = (0..30).map(|_| (0..rng.gen_range(3..15)).map(|_| rng.gen_range(4..20)).collect()).collect();
    let identical = corpus_bleu(&refs, &refs).map_err(|e| e.to_string())?.score;
    let hand = corpus_bleu(&[vec![1u32, 2, 3, 4]], &[vec![1u32, 2, 3, 4, 5]]).unwrap().score;
    let expected = 100.0 * (-0.25f64).exp();
    let hyps: Vec<Vec<u32>> = refs
        .iter()
        .map(|r| r.iter().map(|&t| if rng.gen_bool(0.3) { rng.gen_range(4..20) } else { t }).collect())
        .collect();
    let base = corpus_bleu(&hyps, &refs).unwrap().score;
    let mut pairs: Vec<(Vec<u32>, Vec<u32>)> = hyps.into_iter().zip(refs).collect();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        pairs.shuffle(&mut rng);
        let (h, r): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
        worst = worst.max((corpus_bleu(&h, &r).unwrap().score - base).abs());
    }
    check(
        identical == 100.0 && (hand - expected).abs() <= 1e-6 && worst == 0.0,
        format!("identical {identical}, 4-vs-5 {hand:.9} (want {expected:.9}), shuffle drift {worst:e}"),
    )
}

fn toy_pairs(specs: &str, seed: u64) -> (usize, Vec<PreparedPair>) {
    let corpora = synthesize_toy_corpus(&parse_synth_spec(specs).unwrap(), seed).unwrap();
    let vocab = build_vocabulary(&corpora, TokenizerSpec::Whitespace);
    let pairs = prepare_corpora(&corpora, TokenizerSpec::Whitespace, &vocab).unwrap();
    (vocab.len(), pairs)
}

fn c6_beam() -> Verdict {
    let (v, pairs) = toy_pairs("en-rv reverse 400", 6);
    let (train, test) = pairs.split_at(300);
    let mcfg = ModelConfig {
        encoder_layers: 2,
        decoder_layers: 1,
        emb_dim: 32,
        ffn_dim: 64,
        dropout: 0.0,
        ..ModelConfig::toy_teacher(v)
    };
    let cfg = TrainConfig {
        phase1_steps: 150,
        phase2_steps: 0,
        warmup_steps: 20,
        log_interval: 0,
        ..TrainConfig::toy()
    };
    let model = train_supervised(&mcfg, train, &cfg, &mut NoObserver).map_err(|e| e.to_string())?.model;
    let mut inputs = 0;
    for p in test.iter().take(100) {
        let max_len = 2 * p.source.len() + 8;
        let g = greedy_decode(&model, &p.source, max_len).unwrap();
        for lp in [0.0, 1.0] {
            if beam_decode(&model, &p.source, 1, max_len, lp).unwrap() != g {
                return Err(format!("beam 1 diverged from greedy on input {inputs} (lp {lp})"));
            }
        }
        inputs += 1;
    }
    let mut trees = 0;
    for seed in 0..100 {
        let s = decode_cases::TableScorer::new(3, seed);
        for beam in [9, 12, 20] {
            for lp in [0.0, 1.0] {
                let got = beam_search(&s, beam, 2, lp).unwrap();
                let want = decode_cases::exhaustive_best(&s, 2, lp);
                if got.tokens != want.tokens || (got.score - want.score).abs() > 1e-12 {
                    return Err(format!("seed {seed} beam {beam} lp {lp}: {:?} vs {:?}", got.tokens, want.tokens));
                }
            }
        }
        trees += 1;
    }
    Ok(format!("{inputs} trained-model inputs; {trees} random 3-token/2-step trees x beams 9/12/20"))
}

/// Full-size toy setup shared by criteria 7 to 9.
struct Lab {
    test: Vec<PreparedPair>,
    train: Vec<PreparedPair>,
    teacher: Model,
    teacher_bleu: BTreeMap<Direction, f64>,
    students: Vec<(u64, Model, BTreeMap<Direction, f64>)>,
}

const SEEDS: [u64; 3] = [1, 2, 3];

fn bleu_by_direction(m: &Model, pairs: &[PreparedPair]) -> BTreeMap<Direction, f64> {
    evaluate_prepared(m, pairs, &DecodeConfig::default())
        .unwrap()
        .into_iter()
        .map(|(d, b)| (d, b.score))
        .collect()
}

fn fmt_bleu(s: &BTreeMap<Direction, f64>) -> String {
    s.iter().map(|(d, b)| format!("{}={b:.2}", d.tgt)).collect::<Vec<_>>().join(" ")
}

fn build_lab() -> Lab {
    let spec = parse_synth_spec("en-rv reverse 2400\nen-cs caesar-1 2400\nen-dp duplicate 2400").unwrap();
    let corpora = synthesize_toy_corpus(&spec, 1).unwrap();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in &corpora {
        // Held-out sources never appear in training.
        let mut seen = HashSet::new();
        let tr: Vec<_> = c.pairs.iter().filter(|p| seen.insert(p.src.clone())).take(2000).cloned().collect();
        let te: Vec<_> = c.pairs.iter().filter(|p| seen.insert(p.src.clone())).take(200).cloned().collect();
        assert_eq!((tr.len(), te.len()), (2000, 200), "{} is short of unique sources", c.direction);
        train.push(DirectionCorpus::new(c.direction.clone(), tr).unwrap());
        test.push(DirectionCorpus::new(c.direction.clone(), te).unwrap());
    }
    let train = balance_all(&train, 2000, 1).unwrap();
    let vocab = build_vocabulary(&train, TokenizerSpec::Whitespace);
    let train = prepare_corpora(&train, TokenizerSpec::Whitespace, &vocab).unwrap();
    let test = prepare_corpora(&test, TokenizerSpec::Whitespace, &vocab).unwrap();

    let t = Instant::now();
    let teacher_cfg = TrainConfig {
        phase1_steps: 3000,
        phase2_steps: 0,
        log_interval: 0,
        ..TrainConfig::toy()
    };
    let teacher = train_supervised(&ModelConfig::toy_teacher(vocab.len()), &train, &teacher_cfg, &mut NoObserver)
        .unwrap()
        .model;
    let teacher_bleu = bleu_by_direction(&teacher, &test);
    eprintln!("  teacher ({:.0}s): {}", t.elapsed().as_secs_f64(), fmt_bleu(&teacher_bleu));
    Lab {
        test,
        train,
        teacher,
        teacher_bleu,
        students: Vec::new(),
    }
}

fn run_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        phase1_steps: 500,
        phase2_steps: 2000,
        seed,
        log_interval: 0,
        ..TrainConfig::toy()
    }
}

fn c7_distillation(lab: &mut Lab) -> Verdict {
    let scfg = ModelConfig::toy_student(lab.teacher.config.vocab_size);
    let (mut student_means, mut baseline_means) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let cfg = run_cfg(seed);
        let t = Instant::now();
        let dcfg = DistillConfig::default();
        let s = distill(&lab.teacher, &scfg, &lab.train, &cfg, &dcfg, &mut NoObserver).unwrap().model;
        let sb = bleu_by_direction(&s, &lab.test);
        let ts = t.elapsed().as_secs_f64();
        // The CE-only baseline starts from the same teacher-derived weights.
        let t = Instant::now();
        let init = init_student_from_teacher(&lab.teacher, &scfg).unwrap();
        let b = train_supervised_from(init, &lab.train, &cfg, &mut NoObserver).unwrap().model;
        let bb = bleu_by_direction(&b, &lab.test);
        eprintln!(
            "  seed {seed}: student ({ts:.0}s) {} | baseline ({:.0}s) {}",
            fmt_bleu(&sb),
            t.elapsed().as_secs_f64(),
            fmt_bleu(&bb)
        );
        student_means.push(mean(&sb.values().copied().collect::<Vec<_>>()));
        baseline_means.push(mean(&bb.values().copied().collect::<Vec<_>>()));
        lab.students.push((seed, s, sb));
    }
    let teacher_min = lab.teacher_bleu.values().copied().fold(f64::INFINITY, f64::min);
    let teacher_mean = mean(&lab.teacher_bleu.values().copied().collect::<Vec<_>>());
    let (student, baseline) = (mean(&student_means), mean(&baseline_means));
    check(
        teacher_min >= 90.0 && student >= baseline && teacher_mean - student <= 10.0,
        format!(
            "teacher min {teacher_min:.2} mean {teacher_mean:.2}; student mean {student:.2} vs baseline {baseline:.2} (gap to teacher {:.2})",
            teacher_mean - student
        ),
    )
}

fn c8_recovery(lab: &Lab) -> Verdict {
    if lab.students.is_empty() {
        return Err("no distilled students".into());
    }
    let (mut rises, mut closed, mut notes) = (Vec::new(), Vec::new(), Vec::new());
    for (seed, student, bleu) in &lab.students {
        let (dir, &before) = bleu.iter().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        let train: Vec<PreparedPair> = lab.train.iter().filter(|p| &p.direction == dir).cloned().collect();
        let test: Vec<PreparedPair> = lab.test.iter().filter(|p| &p.direction == dir).cloned().collect();
        let cfg = TrainConfig {
            lr: 1e-3,
            warmup_steps: 20,
            ..run_cfg(*seed)
        };
        let tuned = finetune(student.clone(), &train, &cfg, 200, &mut NoObserver).unwrap().model;
        let after = bleu_by_direction(&tuned, &test)[dir];
        let gap = lab.teacher_bleu[dir] - before;
        // A student already at or above the teacher has no gap left to close.
        let fraction = if gap <= 0.0 { 1.0 } else { (after - before) / gap };
        notes.push(format!("seed {seed} {}: {before:.2}->{after:.2} (teacher {:.2})", dir.tgt, lab.teacher_bleu[dir]));
        rises.push(after - before);
        closed.push(fraction);
    }
    let (rise, frac) = (median3(rises), median3(closed));
    check(
        rise >= 0.0 && frac >= 0.25,
        format!("median rise {rise:.2}, median gap closed {:.0}%; {}", 100.0 * frac, notes.join(", ")),
    )
}

fn c9_speed(lab: &Lab) -> Verdict {
    let Some((_, student, _)) = lab.students.first() else {
        return Err("no distilled students".into());
    };
    if student.params["encoder.layers.0.ffn.fc1.weight"].data().len()
        != lab.teacher.params["encoder.layers.0.ffn.fc1.weight"].data().len()
        || student.config.encoder_layers != lab.teacher.config.encoder_layers
    {
        return Err("encoders differ in shape".into());
    }
    let sources: Vec<Vec<u32>> = lab.test.iter().step_by(3).take(200).map(|p| p.source.clone()).collect();
    let greedy = DecodeConfig::greedy();
    let t = measure_latency(&lab.teacher, &sources, &greedy, 1, 5).unwrap();
    let s = measure_latency(student, &sources, &greedy, 1, 5).unwrap();
    let ratio = t.seconds_per_sentence / s.seconds_per_sentence;
    check(
        ratio > 1.2 && t.outputs_stable && s.outputs_stable,
        format!(
            "{} sentences; teacher {:.2} ms, student {:.2} ms per sentence; speed {ratio:.2}x",
            sources.len(),
            1e3 * t.seconds_per_sentence,
            1e3 * s.seconds_per_sentence
        ),
    )
}

fn c10_report() -> Verdict {
    use report_fixture::*;
    let res = parse_resources(RESOURCES).unwrap();
    let scores = parse_score_tsv(SCORES).unwrap();
    let reference = parse_score_tsv(REFERENCE).unwrap();
    let r = build_report(&scores, &res, Some(&reference), 3.0, false).map_err(|e| e.to_string())?;
    let plain = build_report(&scores, &res, None, 3.0, false).unwrap();
    let mut worst = 0.0f64;
    for (report, want) in [(&r, FILTERED_CELLS), (&plain, UNFILTERED_CELLS)] {
        if report.cells.len() != want.len() {
            return Err(format!("expected {} populated cells, got {}", want.len(), report.cells.len()));
        }
        for &(cell, m, count) in want {
            let got = report.cells.get(cell).ok_or(format!("cell {cell} missing"))?;
            if got.count != count {
                return Err(format!("cell {cell}: {} directions, expected {count}", got.count));
            }
            worst = worst.max((got.mean - m).abs());
        }
    }
    worst = worst.max((r.overall_avg - FILTERED_AVG).abs()).max((plain.overall_avg - UNFILTERED_AVG).abs());
    let excluded: Vec<(&str, &str)> = r.excluded.iter().map(|d| (d.src.as_str(), d.tgt.as_str())).collect();
    check(
        worst <= 1e-9 && excluded == FILTERED_EXCLUDED && plain.excluded.is_empty(),
        format!("max cell error {worst:.1e}; excluded {excluded:?}"),
    )
}

fn c11_reproducibility() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let run = |args: &[&str]| -> Result<(), String> {
        let out = common::distillmt(d, args);
        if out.status.success() {
            Ok(())
        } else {
            Err(format!("distillmt {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
        }
    };
    fs::write(d.join("spec.txt"), common::SPEC).unwrap();
    fs::write(d.join("tiny.toml"), common::TINY_TOML).unwrap();
    run(&["synth", "--spec", "spec.txt", "--out", "data", "--seed", "3"])?;
    let cfg = ["--profile", "toy", "--config", "tiny.toml", "--set", "dropout=0.1"];
    run(&[&["train-teacher"][..], &cfg, &["--data", "data", "--out", "t.ckpt"]].concat())?;
    run(&[&["distill"][..], &cfg, &["--teacher", "t.ckpt", "--data", "data", "--out", "a.ckpt"]].concat())?;
    run(&["distill", "--manifest", "a.ckpt.manifest.json", "--out", "b.ckpt"])?;
    for name in ["a", "b"] {
        run(&["evaluate", "--checkpoint", &format!("{name}.ckpt"), "--data", "data", "--out", &format!("{name}.tsv")])?;
    }
    let read = |f: &str| fs::read(d.join(f)).unwrap();
    let (ca, cb, ea, eb) = (read("a.ckpt"), read("b.ckpt"), read("a.tsv"), read("b.tsv"));
    check(
        ca == cb && ea == eb,
        format!(
            "checkpoints {} bytes {}, score TSVs {}",
            ca.len(),
            if ca == cb { "identical" } else { "differ" },
            if ea == eb { "identical" } else { "differ" }
        ),
    )
}

/// Prints one line and records a failure; `head_start` is time already
/// spent on shared setup that counts against this criterion.
fn report(failed: &mut Vec<usize>, n: usize, name: &str, budget: u64, head_start: Duration, f: impl FnOnce() -> Verdict) {
    let t = Instant::now();
    let v = f();
    let total = head_start + t.elapsed();
    let over = total > Duration::from_secs(budget);
    let (status, detail) = match v {
        Ok(d) if !over => ("PASS", d),
        Ok(d) => ("FAIL", format!("{d}; over the {budget}s budget")),
        Err(d) => ("FAIL", d),
    };
    if status == "FAIL" {
        failed.push(n);
    }
    println!("criterion {n:>2} {name}: {status} ({:.1}s) {detail}", total.as_secs_f64());
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let on = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let mut failed = Vec::new();
    let zero = Duration::ZERO;
    if on(1) {
        report(&mut failed, 1, "loss identities", 5, zero, c1_loss_identities);
    }
    if on(2) {
        report(&mut failed, 2, "gradient suite", 120, zero, c2_gradients);
    }
    if on(3) {
        report(&mut failed, 3, "balanced sampler", 5, zero, c3_balance);
    }
    if on(4) {
        report(&mut failed, 4, "category logic", 1, zero, c4_categories);
    }
    if on(5) {
        report(&mut failed, 5, "BLEU oracle", 5, zero, c5_bleu);
    }
    if on(6) {
        report(&mut failed, 6, "beam correctness", 30, zero, c6_beam);
    }
    if on(7) || on(8) || on(9) {
        let t = Instant::now();
        let mut lab = build_lab();
        // Teacher training counts against the distillation budget.
        report(&mut failed, 7, "distillation analog", 1800, t.elapsed(), || c7_distillation(&mut lab));
        if on(8) {
            report(&mut failed, 8, "recovery analog", 300, zero, || c8_recovery(&lab));
        }
        if on(9) {
            report(&mut failed, 9, "speed analog", 300, zero, || c9_speed(&lab));
        }
    }
    if on(10) {
        report(&mut failed, 10, "report fixture", 1, zero, c10_report);
    }
    if on(11) {
        report(&mut failed, 11, "reproducibility", 600, zero, c11_reproducibility);
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        if std::env::var_os("DISTILLMT_ACCEPTANCE_STRICT").is_some_and(|v| v != "0") {
            std::process::exit(1);
        }
    }
}
