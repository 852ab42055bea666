//! Normalized pair-distance sums, local score matrices and histograms.

mod histogram;
mod matrix;
mod sums;

pub use histogram::{
    compute_shlqi2, hlqi2_counts, ColumnNorm, HistogramParams, OverflowPolicy, Shlqi2Grid,
    DEFAULT_BINS, DEFAULT_GAMMA, DEFAULT_TOP,
};
pub use matrix::{anchor_trajectory, compute_mlqi2, neighborhood_mask, set_fingerprint, Mlqi2Matrix};
pub use sums::{
    qi2r_direct, qi2r_from_sums, update_sums_add_point, PairSums, Stabilizer, DEFAULT_EPSILON,
    STABILIZER_SAMPLE_PAIRS,
};
pub(crate) use sums::pair_distances;
