//! Input-output complexity indicators for data quality assurance.
//!
//! The pipeline splits every point into an input and an output part,
//! measures how well mean-normalized input distances predict output
//! distances (QI2R), repeats this over growing k-NN neighborhoods of every
//! point (MLQI2), and condenses the result into a per-k histogram (SHLQI2).
//! Detectors in [`analysis`] query the per-point trajectories.
//!
//! ```no_run
//! use qi2_core::prelude::*;
//!
//! let ds = qi2_core::dataset::load_idx_mnist("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?;
//! let metrics = Metrics::new(Metric::Euclidean, Metric::Discrete);
//! let stab = Stabilizer::from_dataset(&ds, metrics, DEFAULT_EPSILON)?;
//! let index = build_index(&ds, metrics.input, 100)?;
//! let matrix = compute_mlqi2(&ds, &index, metrics, &stab)?;
//! let grid = compute_shlqi2(&matrix, &HistogramParams::auto(&matrix))?;
//! # Ok::<(), qi2_core::Error>(())
//! ```

pub mod analysis;
pub mod container;
pub mod dataset;
pub mod error;
pub mod export;
pub mod knn;
pub mod metrics;
pub mod parallel;
pub mod pipeline;
pub mod qi2;
pub mod synth;

pub use error::{Error, ErrorKind, Result};

pub mod prelude {
    pub use crate::analysis::{DetectionReport, DetectorConfig};
    pub use crate::dataset::{Dataset, Embedding2D, Labels};
    pub use crate::knn::{build_index, NeighborIndex};
    pub use crate::metrics::{Metric, Metrics};
    pub use crate::qi2::{
        compute_mlqi2, compute_shlqi2, ColumnNorm, HistogramParams, Mlqi2Matrix, OverflowPolicy,
        PairSums, Shlqi2Grid, Stabilizer, DEFAULT_EPSILON,
    };
}
