use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{classify_resource, Direction, LanguageResourceEntry, ResourceCategory};
use crate::error::{Error, Result};

/// Column order of the main results table.
pub const MAIN_CELLS: [&str; 12] = [
    "VL2VL", "VL2L", "VL2M", "VL2H", "L2VL", "L2L", "L2M", "L2H", "M2VL", "M2L", "H2VL", "H2L",
];

/// Cells added by `--all-cells`.
pub const EXTRA_CELLS: [&str; 4] = ["M2M", "M2H", "H2M", "H2H"];

pub fn cell_label(src: ResourceCategory, tgt: ResourceCategory) -> String {
    format!("{}2{}", src.label(), tgt.label())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellStat {
    pub mean: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    /// Every non-empty cell, shown or not.
    pub cells: BTreeMap<String, CellStat>,
    /// Displayed columns, in order.
    pub columns: Vec<String>,
    /// Mean over every direction that falls in a displayed column.
    pub overall_avg: f64,
    /// Directions dropped by the reference-score filter.
    pub excluded: Vec<Direction>,
}

/// Buckets direction scores into `srcCat2tgtCat` cells.
///
/// With a reference score map, directions whose reference score is at most
/// `filter_floor`, or that the reference does not cover, are excluded.
pub fn build_report(
    scores: &BTreeMap<Direction, f64>,
    resources: &[LanguageResourceEntry],
    reference: Option<&BTreeMap<Direction, f64>>,
    filter_floor: f64,
    all_cells: bool,
) -> Result<CategoryReport> {
    let cat: BTreeMap<&str, ResourceCategory> =
        resources.iter().map(|e| (e.language.as_str(), classify_resource(e))).collect();
    let lookup = |l: &str| {
        cat.get(l)
            .copied()
            .ok_or_else(|| Error::Data(format!("language `{l}` missing from resources")))
    };
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut excluded = Vec::new();
    for (d, &s) in scores {
        let label = cell_label(lookup(&d.src)?, lookup(&d.tgt)?);
        if let Some(r) = reference {
            match r.get(d) {
                Some(&rs) if rs > filter_floor => {}
                _ => {
                    excluded.push(d.clone());
                    continue;
                }
            }
        }
        let e = sums.entry(label).or_insert((0.0, 0));
        e.0 += s;
        e.1 += 1;
    }
    let cells: BTreeMap<String, CellStat> = sums
        .into_iter()
        .map(|(k, (s, n))| (k, CellStat { mean: s / n as f64, count: n }))
        .collect();
    let mut columns: Vec<String> = MAIN_CELLS.iter().map(|s| s.to_string()).collect();
    if all_cells {
        columns.extend(EXTRA_CELLS.iter().map(|s| s.to_string()));
    }
    let (mut total, mut n) = (0.0, 0);
    for c in &columns {
        if let Some(st) = cells.get(c) {
            total += st.mean * st.count as f64;
            n += st.count;
        }
    }
    Ok(CategoryReport {
        cells,
        columns,
        overall_avg: if n == 0 { f64::NAN } else { total / n as f64 },
        excluded,
    })
}

impl CategoryReport {
    /// Fixed-width table: a header row and one row of scores labeled `name`.
    pub fn to_table(&self, name: &str) -> String {
        let width = 7;
        let label_w = name.len().max(5);
        let mut s = format!("{:<label_w$}", "model");
        for c in self.columns.iter().map(String::as_str).chain(["AVG"]) {
            write!(s, " {c:>width$}").unwrap();
        }
        s.push('\n');
        write!(s, "{name:<label_w$}").unwrap();
        for c in &self.columns {
            match self.cells.get(c) {
                Some(st) => write!(s, " {:>width$.1}", st.mean).unwrap(),
                None => write!(s, " {:>width$}", "-").unwrap(),
            }
        }
        if self.overall_avg.is_nan() {
            write!(s, " {:>width$}", "-").unwrap();
        } else {
            write!(s, " {:>width$.1}", self.overall_avg).unwrap();
        }
        s.push('\n');
        s
    }

    /// `cell=score` pairs, one line, in column order; empty cells are `nan`.
    pub fn to_kv_line(&self) -> String {
        let mut parts: Vec<String> = self
            .columns
            .iter()
            .map(|c| match self.cells.get(c) {
                Some(st) => format!("{c}={}", st.mean),
                None => format!("{c}=nan"),
            })
            .collect();
        parts.push(format!("AVG={}", self.overall_avg));
        parts.join(" ")
    }
}

/// `src \t tgt \t score` lines in direction order.
pub fn format_score_tsv(scores: &BTreeMap<Direction, f64>) -> String {
    scores.iter().map(|(d, s)| format!("{}\t{}\t{s}\n", d.src, d.tgt)).collect()
}

pub fn parse_score_tsv(text: &str) -> Result<BTreeMap<Direction, f64>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let parsed = match f[..] {
            [src, tgt, score] => score.trim().parse::<f64>().ok().map(|s| (Direction::new(src, tgt), s)),
            _ => None,
        };
        let (d, s) = parsed
            .filter(|(d, s)| !d.src.is_empty() && !d.tgt.is_empty() && s.is_finite())
            .ok_or_else(|| Error::Data(format!("score TSV line {}: expected `src<TAB>tgt<TAB>score`", n + 1)))?;
        if out.insert(d.clone(), s).is_some() {
            return Err(Error::Data(format!("score TSV line {}: duplicate direction {d}", n + 1)));
        }
    }
    Ok(out)
}
