//! The `distillmt` command-line pipeline.
//!
//! Exit codes: 0 on success, 2 for usage, config or malformed-input errors,
//! 3 for runtime failures.

pub mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use distillmt_core::Error;

pub use config::{Profile, RunConfig};
pub use manifest::RunManifest;

/// Environment variable holding the default worker-thread count.
pub const THREADS_ENV: &str = "DISTILLMT_THREADS";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Data(_) | Error::Vocabulary(_) | Error::Length { .. } | Error::Checkpoint(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "distillmt", version, about = "Seq2seq knowledge distillation at desk scale")]
pub struct Cli {
    /// Cap on worker threads (defaults to $DISTILLMT_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

/// Where a training command gets its configuration.
#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Flat TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in defaults to start from.
    #[arg(long, value_enum)]
    pub profile: Option<Profile>,
    /// Override one key, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replay the config and inputs recorded in a run manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DecodeArgs {
    #[arg(long, default_value_t = 5)]
    pub beam: usize,
    #[arg(long, default_value_t = 1.0)]
    pub length_penalty: f64,
    /// Fixed output budget; defaults to 2 x source length + 8.
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate toy corpora and hash-based train/dev/test splits.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train a teacher with cross-entropy.
    TrainTeacher {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Distill a student from a teacher checkpoint.
    Distill {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a student-sized model with cross-entropy only.
    TrainBaseline {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Initialize from this teacher's leading layers instead of randomly.
        #[arg(long)]
        init_from: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune a model on one direction.
    Finetune {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Direction to tune, `src-tgt`.
        #[arg(long)]
        direction: Option<String>,
        /// Defaults to the `finetune_steps` config key.
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode a held-out split and write per-direction BLEU as TSV.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[command(flatten)]
        decode: DecodeArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bucket direction scores into resource-category cells.
    Report {
        #[arg(long)]
        scores: PathBuf,
        /// Language resource sizes, `language size` per line.
        #[arg(long)]
        resources: PathBuf,
        /// Scores of a reference model used for the floor filter.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = 3.0)]
        filter_floor: f64,
        /// Also show M2M, M2H, H2M and H2H.
        #[arg(long)]
        all_cells: bool,
        #[arg(long, default_value = "model")]
        name: String,
    },
    /// Measure batch-1 decoding latency and speed ratios.
    Bench {
        /// `name=path` or a bare path (named by file stem); repeatable.
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<String>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 200)]
        sentences: usize,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        beam: usize,
        /// Model the ratios are relative to; defaults to the first.
        #[arg(long)]
        reference: Option<String>,
    },
}

fn init_threads(flag: Option<usize>) -> Result<(), CliError> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.parse().map_err(|_| CliError::Usage(format!("{THREADS_ENV}={v} is not a count")))?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(CliError::Usage("thread count must be positive".into()));
        }
        // A second call in the same process (tests) keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = init_threads(cli.threads).and_then(|_| commands::dispatch(cli.command));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
