//! Index, scores, histogram and header in one call.

use serde::{Deserialize, Serialize};

use crate::analysis::{global_qi2r_with, DetectorConfig};
use crate::container::{ContainerHeader, Results};
use crate::dataset::Dataset;
use crate::error::Result;
use crate::knn::{build_index, NeighborIndex};
use crate::metrics::Metrics;
use crate::qi2::{
    compute_mlqi2, compute_shlqi2, ColumnNorm, HistogramParams, OverflowPolicy, Stabilizer,
    DEFAULT_BINS, DEFAULT_EPSILON, DEFAULT_GAMMA,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComputeOptions {
    pub metrics: Metrics,
    pub k_max: usize,
    pub epsilon: f64,
    pub bins: usize,
    pub bin_min: f64,
    /// Derived from the observed maximum when absent.
    pub bin_width: Option<f64>,
    pub gamma: f64,
    pub column_norm: ColumnNorm,
    pub overflow: OverflowPolicy,
    /// Also compute QI2R over the whole dataset (`O(n²)`).
    pub global: bool,
    pub detectors: DetectorConfig,
}

impl Default for ComputeOptions {
    fn default() -> Self {
        Self {
            metrics: Metrics::default(),
            k_max: 100,
            epsilon: DEFAULT_EPSILON,
            bins: DEFAULT_BINS,
            bin_min: 0.0,
            bin_width: None,
            gamma: DEFAULT_GAMMA,
            column_norm: ColumnNorm::Max,
            overflow: OverflowPolicy::Clamp,
            global: true,
            detectors: DetectorConfig::default(),
        }
    }
}

pub struct Computed {
    pub results: Results,
    pub index: NeighborIndex,
    pub stabilizer: Stabilizer,
}

/// Runs the pipeline, reusing `index` when one is supplied.
pub fn compute(dataset: &Dataset, opts: &ComputeOptions, index: Option<NeighborIndex>) -> Result<Computed> {
    opts.detectors.validate()?;
    let stab = Stabilizer::from_dataset(dataset, opts.metrics, opts.epsilon)?;
    let index = match index {
        Some(idx) if idx.len() == dataset.len() && idx.k_max() >= opts.k_max => {
            if idx.k_max() == opts.k_max {
                idx
            } else {
                idx.truncated(opts.k_max)?
            }
        }
        _ => build_index(dataset, opts.metrics.input, opts.k_max)?,
    };
    let matrix = compute_mlqi2(dataset, &index, opts.metrics, &stab)?;
    let mut params = HistogramParams::auto_with_bins(&matrix, opts.bins);
    params.bin_min = opts.bin_min;
    if let Some(w) = opts.bin_width {
        params.bin_width = w;
    } else {
        let top = matrix.max_valid().unwrap_or(0.0).max(crate::qi2::DEFAULT_TOP);
        params.bin_width = (top - opts.bin_min) / opts.bins.max(1) as f64;
    }
    params.gamma = opts.gamma;
    params.column_norm = opts.column_norm;
    params.overflow = opts.overflow;
    let grid = compute_shlqi2(&matrix, &params)?;
    let mut header = ContainerHeader::new(&matrix, &grid, opts.metrics, stab, dataset.fingerprint());
    header.detector_defaults = opts.detectors.clone();
    if opts.global {
        header.global_qi2r = Some(global_qi2r_with(dataset, opts.metrics, &stab)?);
    }
    Ok(Computed {
        results: Results::new(header, matrix, grid)?,
        index,
        stabilizer: stab,
    })
}
