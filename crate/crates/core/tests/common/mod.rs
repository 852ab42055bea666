#![allow(dead_code)]

use qi2_core::dataset::Dataset;
use qi2_core::knn::{build_index, NeighborIndex};
use qi2_core::metrics::{Metric, Metrics};
use qi2_core::qi2::{compute_mlqi2, Mlqi2Matrix, Stabilizer, DEFAULT_EPSILON};

pub const CLASSIFICATION: Metrics = Metrics {
    input: Metric::Euclidean,
    output: Metric::Discrete,
};

pub struct Run {
    pub index: NeighborIndex,
    pub stab: Stabilizer,
    pub matrix: Mlqi2Matrix,
}

pub fn run(ds: &Dataset, metrics: Metrics, k_max: usize) -> Run {
    let stab = Stabilizer::from_dataset(ds, metrics, DEFAULT_EPSILON).unwrap();
    let index = build_index(ds, metrics.input, k_max).unwrap();
    let matrix = compute_mlqi2(ds, &index, metrics, &stab).unwrap();
    Run {
        index,
        stab,
        matrix,
    }
}

/// `|a - b| <= max(abs, rel · max(|a|, |b|))`.
pub fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() <= abs.max(rel * a.abs().max(b.abs()))
}
