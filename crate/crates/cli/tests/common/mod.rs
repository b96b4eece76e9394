#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

pub const SPEC: &str = "en-rv reverse 200\nen-cs caesar-1 150\n";

/// Small enough that a full train/distill round takes a few seconds.
pub const TINY_TOML: &str = r#"encoder_layers = 1
decoder_layers = 2
student_encoder_layers = 1
student_decoder_layers = 1
emb_dim = 16
ffn_dim = 32
num_heads = 2
teacher_steps = 30
phase1_steps = 5
phase2_steps = 15
quota = 100
"#;

pub fn distillmt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_distillmt"))
        .current_dir(dir)
        .args(args)
        .env_remove("DISTILLMT_THREADS")
        .output()
        .expect("spawn distillmt")
}

/// Runs and panics with stderr unless the exit code is `code`.
pub fn expect(dir: &Path, args: &[&str], code: i32) -> Output {
    let out = distillmt(dir, args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "distillmt {args:?}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Writes the spec and config, then synthesizes `data/`.
pub fn workspace(dir: &Path) {
    std::fs::write(dir.join("spec.txt"), SPEC).unwrap();
    std::fs::write(dir.join("tiny.toml"), TINY_TOML).unwrap();
    expect(dir, &["synth", "--spec", "spec.txt", "--out", "data", "--seed", "3"], 0);
}

pub fn train_teacher(dir: &Path, out: &str) {
    expect(
        dir,
        &["train-teacher", "--profile", "toy", "--config", "tiny.toml", "--data", "data", "--out", out],
        0,
    );
}
