//! Corpus BLEU, per-direction evaluation, category reports, and latency.

mod bleu;
mod evaluate;
mod latency;
mod report;

pub use bleu::{corpus_bleu, BleuScore, MAX_ORDER};
pub use evaluate::{decode_all, evaluate_model, evaluate_prepared, strip_eos, token_accuracy};
pub use latency::{measure_latency, median, speed_ratio, time_reps, LatencyMeasurement};
pub use report::{
    build_report, cell_label, format_score_tsv, parse_score_tsv, CategoryReport, CellStat, EXTRA_CELLS, MAIN_CELLS,
};
