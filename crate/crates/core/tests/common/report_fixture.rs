//! Hand-written report inputs and their hand-computed cell means, shared
//! with the workspace acceptance suite.
#![allow(dead_code)]

pub const RESOURCES: &str = include_str!("../fixtures/report_resources.txt");
pub const SCORES: &str = include_str!("../fixtures/report_scores.tsv");
pub const REFERENCE: &str = include_str!("../fixtures/report_reference.tsv");

/// aa and bb are VL (bb on the 100K edge), cc and dd are L (dd on the 1M
/// edge), ee is M and en is H.
///
/// With the reference filter at 3, cc-aa (2.9) and aa-cc (3.0, not above
/// the floor) drop out.
pub const FILTERED_CELLS: &[(&str, f64, usize)] = &[
    ("VL2VL", (8.7 + 4.0) / 2.0, 2),
    ("L2L", 10.0, 1),
    ("L2VL", 2.0, 1),
    ("M2VL", 12.5, 1),
    ("H2L", 20.0, 1),
    ("H2M", 30.0, 1),
];
pub const FILTERED_AVG: f64 = (8.7 + 4.0 + 10.0 + 2.0 + 12.5 + 20.0) / 6.0;
pub const FILTERED_AVG_ALL_CELLS: f64 = (8.7 + 4.0 + 10.0 + 2.0 + 12.5 + 20.0 + 30.0) / 7.0;
pub const FILTERED_EXCLUDED: &[(&str, &str)] = &[("aa", "cc"), ("cc", "aa")];

/// Without a reference nothing is dropped.
pub const UNFILTERED_CELLS: &[(&str, f64, usize)] = &[
    ("VL2VL", (8.7 + 4.0) / 2.0, 2),
    ("VL2L", 6.0, 1),
    ("L2L", 10.0, 1),
    ("L2VL", (2.0 + 7.0) / 2.0, 2),
    ("M2VL", 12.5, 1),
    ("H2L", 20.0, 1),
    ("H2M", 30.0, 1),
];
pub const UNFILTERED_AVG: f64 = (8.7 + 4.0 + 6.0 + 10.0 + 2.0 + 7.0 + 12.5 + 20.0) / 8.0;
