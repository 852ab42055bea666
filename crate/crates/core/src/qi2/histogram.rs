//! Per-k histograms of the valid local scores, normalized per column.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::matrix::Mlqi2Matrix;
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 100;
pub const DEFAULT_GAMMA: f64 = 0.5;
/// Top edge used unless the observed maximum exceeds it.
pub const DEFAULT_TOP: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OverflowPolicy {
    /// Values outside the bin range go to the nearest end bin.
    #[default]
    Clamp,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ColumnNorm {
    #[default]
    Max,
    Sum,
}

macro_rules! named_enum {
    ($ty:ty, $($variant:path => $name:literal),+) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self { $($variant => $name),+ }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($name => Ok($variant),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($ty), " '{}'"), other
                    ))),
                }
            }
        }
    };
}

named_enum!(OverflowPolicy, OverflowPolicy::Clamp => "clamp", OverflowPolicy::Drop => "drop");
named_enum!(ColumnNorm, ColumnNorm::Max => "max", ColumnNorm::Sum => "sum");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramParams {
    pub bin_min: f64,
    pub bin_width: f64,
    pub bin_count: usize,
    pub gamma: f64,
    pub column_norm: ColumnNorm,
    pub overflow: OverflowPolicy,
}

impl Default for HistogramParams {
    fn default() -> Self {
        Self {
            bin_min: 0.0,
            bin_width: DEFAULT_TOP / DEFAULT_BINS as f64,
            bin_count: DEFAULT_BINS,
            gamma: DEFAULT_GAMMA,
            column_norm: ColumnNorm::Max,
            overflow: OverflowPolicy::Clamp,
        }
    }
}

impl HistogramParams {
    /// Defaults with the top edge raised to the largest valid value.
    pub fn auto(matrix: &Mlqi2Matrix) -> Self {
        Self::auto_with_bins(matrix, DEFAULT_BINS)
    }

    pub fn auto_with_bins(matrix: &Mlqi2Matrix, bin_count: usize) -> Self {
        let top = matrix.max_valid().unwrap_or(0.0).max(DEFAULT_TOP);
        Self {
            bin_width: top / bin_count.max(1) as f64,
            bin_count,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bin_width > 0.0 && self.bin_width.is_finite()) {
            return Err(Error::Config(format!("bin width must be positive, got {}", self.bin_width)));
        }
        if self.bin_count == 0 {
            return Err(Error::Config("bin count must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !self.bin_min.is_finite() {
            return Err(Error::Config("bin minimum must be finite".into()));
        }
        Ok(())
    }

    pub fn top(&self) -> f64 {
        self.bin_min + self.bin_count as f64 * self.bin_width
    }

    fn edge(&self, v: usize) -> f64 {
        self.bin_min + v as f64 * self.bin_width
    }

    /// Bin of `h` under the half-open rule `edge(v) <= h < edge(v + 1)`,
    /// or `None` when the value is dropped.
    pub fn bin_of(&self, h: f64) -> Option<usize> {
        let last = self.bin_count - 1;
        if h < self.bin_min {
            return match self.overflow {
                OverflowPolicy::Clamp => Some(0),
                OverflowPolicy::Drop => None,
            };
        }
        let guess = ((h - self.bin_min) / self.bin_width).floor();
        if guess > last as f64 + 1.0 {
            return match self.overflow {
                OverflowPolicy::Clamp => Some(last),
                OverflowPolicy::Drop => None,
            };
        }
        // the division can round across an edge; settle against the edges
        let mut v = guess as usize;
        if v > 0 && h < self.edge(v) {
            v -= 1;
        } else if h >= self.edge(v + 1) {
            v += 1;
        }
        if v > last {
            match self.overflow {
                OverflowPolicy::Clamp => Some(last),
                OverflowPolicy::Drop => None,
            }
        } else {
            Some(v)
        }
    }
}

/// Raw counts of valid entries, bin-major: `counts[v * k_max + k - 1]`.
pub fn hlqi2_counts(matrix: &Mlqi2Matrix, params: &HistogramParams) -> Result<Vec<u64>> {
    params.validate()?;
    let k_max = matrix.k_max();
    let mut counts = vec![0u64; params.bin_count * k_max];
    for i in 0..matrix.len() {
        let row = matrix.row(i);
        for (c, (&h, &ok)) in row.iter().zip(matrix.valid_row(i)).enumerate() {
            if ok {
                if let Some(v) = params.bin_of(h) {
                    counts[v * k_max + c] += 1;
                }
            }
        }
    }
    Ok(counts)
}

/// Normalized, gamma-calibrated histogram grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shlqi2Grid {
    pub params: HistogramParams,
    pub k_max: usize,
    pub counts: Vec<u64>,
    /// `bin_count × k_max`, bin-major, entries in `[0, 1]`.
    pub grid: Vec<f64>,
}

impl Shlqi2Grid {
    pub fn from_counts(counts: Vec<u64>, k_max: usize, params: HistogramParams) -> Result<Self> {
        params.validate()?;
        if counts.len() != params.bin_count * k_max {
            return Err(Error::DimensionMismatch {
                expected: params.bin_count * k_max,
                actual: counts.len(),
            });
        }
        let bins = params.bin_count;
        let mut grid = vec![0.0; bins * k_max];
        for c in 0..k_max {
            let column = (0..bins).map(|v| counts[v * k_max + c]);
            let scale = match params.column_norm {
                ColumnNorm::Max => column.max().unwrap_or(0),
                ColumnNorm::Sum => column.sum(),
            };
            if scale == 0 {
                continue;
            }
            for v in 0..bins {
                let x = counts[v * k_max + c] as f64 / scale as f64;
                grid[v * k_max + c] = if params.gamma == 1.0 { x } else { x.powf(params.gamma) };
            }
        }
        Ok(Self {
            params,
            k_max,
            counts,
            grid,
        })
    }

    pub fn bins(&self) -> usize {
        self.params.bin_count
    }

    #[inline]
    pub fn value(&self, bin: usize, k: usize) -> f64 {
        self.grid[bin * self.k_max + k - 1]
    }

    #[inline]
    pub fn count(&self, bin: usize, k: usize) -> u64 {
        self.counts[bin * self.k_max + k - 1]
    }

    /// Same counts, different gamma.
    pub fn regamma(&self, gamma: f64) -> Result<Self> {
        Self::from_counts(
            self.counts.clone(),
            self.k_max,
            HistogramParams {
                gamma,
                ..self.params
            },
        )
    }
}

pub fn compute_shlqi2(matrix: &Mlqi2Matrix, params: &HistogramParams) -> Result<Shlqi2Grid> {
    let counts = hlqi2_counts(matrix, params)?;
    Shlqi2Grid::from_counts(counts, matrix.k_max(), *params)
}
