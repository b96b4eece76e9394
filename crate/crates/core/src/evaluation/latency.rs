use std::collections::BTreeMap;
use std::time::Instant;

use crate::data::TokenId;
use crate::decoding::{decode, DecodeConfig};
use crate::error::{Error, Result};
use crate::model::Model;

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyMeasurement {
    /// Median over timed reps of wall time per sentence.
    pub seconds_per_sentence: f64,
    /// Per-sentence time of every timed rep, in run order.
    pub rep_seconds: Vec<f64>,
    /// Whether every rep produced the same outputs.
    pub outputs_stable: bool,
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Times `run` (one pass over `n` sentences) `warmup + reps` times and keeps
/// the median of the timed reps, per sentence.
pub fn time_reps<T: PartialEq>(
    n: usize,
    warmup: usize,
    reps: usize,
    mut run: impl FnMut() -> Result<T>,
) -> Result<(LatencyMeasurement, T)> {
    if warmup < 1 || reps < 3 {
        return Err(Error::Measurement(format!("need warmup >= 1 and reps >= 3, got {warmup} and {reps}")));
    }
    if n == 0 {
        return Err(Error::Measurement("no sentences to time".into()));
    }
    let mut first = None;
    let mut stable = true;
    for _ in 0..warmup {
        let out = run()?;
        stable &= first.as_ref().map_or(true, |f| *f == out);
        first.get_or_insert(out);
    }
    let mut rep_seconds = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        let out = run()?;
        rep_seconds.push(t.elapsed().as_secs_f64() / n as f64);
        stable &= first.as_ref().map_or(true, |f| *f == out);
    }
    Ok((
        LatencyMeasurement {
            seconds_per_sentence: median(&rep_seconds),
            rep_seconds,
            outputs_stable: stable,
        },
        first.unwrap(),
    ))
}

/// Sequential batch-1 decoding latency.
pub fn measure_latency(
    model: &Model,
    sources: &[Vec<TokenId>],
    cfg: &DecodeConfig,
    warmup: usize,
    reps: usize,
) -> Result<LatencyMeasurement> {
    let (m, _) = time_reps(sources.len(), warmup, reps, || {
        sources.iter().map(|s| decode(model, s, cfg)).collect::<Result<Vec<_>>>()
    })?;
    Ok(m)
}

/// `latency[reference] / latency[name]` for every model.
pub fn speed_ratio(latencies: &BTreeMap<String, f64>, reference: &str) -> Result<BTreeMap<String, f64>> {
    if let Some((name, l)) = latencies.iter().find(|(_, &l)| !(l > 0.0) || !l.is_finite()) {
        return Err(Error::Measurement(format!("latency of {name} is {l}")));
    }
    let r = *latencies
        .get(reference)
        .ok_or_else(|| Error::Measurement(format!("reference model `{reference}` not measured")))?;
    Ok(latencies
        .iter()
        .map(|(k, &l)| (k.clone(), if k == reference { 1.0 } else { r / l }))
        .collect())
}
