//! Pairwise distance metrics for the input and output spaces.
//!
//! Both spaces pick their metric independently, e.g. euclidean on pixel
//! vectors and `discrete` on class labels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    SquaredEuclidean,
    /// `1 - cos(a, b)`; undefined for zero vectors.
    Cosine,
    /// 0 when the vectors are element-wise equal, 1 otherwise.
    Discrete,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::Euclidean,
        Metric::SquaredEuclidean,
        Metric::Cosine,
        Metric::Discrete,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::SquaredEuclidean => "squared_euclidean",
            Metric::Cosine => "cosine",
            Metric::Discrete => "discrete",
        }
    }

    /// Distance between two vectors of equal length.
    pub fn distance(self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                actual: b.len(),
            });
        }
        if self == Metric::Cosine && (is_zero(a) || is_zero(b)) {
            return Err(Error::Domain(
                "cosine distance is undefined for zero vectors".into(),
            ));
        }
        Ok(self.eval(a, b))
    }

    /// Distances from `anchor` to every row of a row-major `block` with
    /// `anchor.len()` columns. Element `i` is bit-identical to
    /// `distance(anchor, block_i)`.
    pub fn distance_row(self, anchor: &[f64], block: &[f64]) -> Result<Vec<f64>> {
        let dim = anchor.len();
        if dim == 0 {
            if block.is_empty() {
                return Ok(Vec::new());
            }
            return Err(Error::DimensionMismatch {
                expected: 0,
                actual: block.len(),
            });
        }
        if !block.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: block.len() % dim,
            });
        }
        let mut out = Vec::with_capacity(block.len() / dim);
        for row in block.chunks_exact(dim) {
            out.push(self.distance(anchor, row)?);
        }
        Ok(out)
    }

    /// Checks the metric's domain for every row of a row-major matrix.
    pub fn validate_rows(self, data: &[f64], dim: usize) -> Result<()> {
        if self == Metric::Cosine && dim > 0 {
            if let Some(i) = data.chunks_exact(dim).position(is_zero) {
                return Err(Error::Domain(format!(
                    "cosine distance is undefined for zero vector at row {i}"
                )));
            }
        }
        Ok(())
    }

    /// Unchecked evaluation; callers guarantee equal lengths and a valid
    /// domain (see [`Metric::validate_rows`]).
    #[inline]
    pub(crate) fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => squared_l2(a, b).sqrt(),
            Metric::SquaredEuclidean => squared_l2(a, b),
            Metric::Cosine => cosine(a, b),
            Metric::Discrete => {
                if a == b {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "euclidean" | "l2" => Ok(Metric::Euclidean),
            "squared_euclidean" | "sqeuclidean" => Ok(Metric::SquaredEuclidean),
            "cosine" => Ok(Metric::Cosine),
            "discrete" => Ok(Metric::Discrete),
            other => Err(Error::Config(format!("unknown metric '{other}'"))),
        }
    }
}

/// The metric pair used for one computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub input: Metric,
    pub output: Metric,
}

impl Metrics {
    pub fn new(input: Metric, output: Metric) -> Self {
        Self { input, output }
    }
}

impl Default for Metrics {
    fn default() -> Self {
        Self::new(Metric::Euclidean, Metric::Euclidean)
    }
}

fn is_zero(v: &[f64]) -> bool {
    v.iter().all(|&x| x == 0.0)
}

// Four independent accumulators; the summation order is fixed so every
// call site produces identical bits for the same pair.
#[inline]
fn squared_l2(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            let d = x[l] - y[l];
            acc[l] += d * d;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        let d = x - y;
        tail += d * d;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 0.0;
    }
    let na = dot(a, a);
    let nb = dot(b, b);
    // na * nb is commutative, so the result stays symmetric.
    let sim = dot(a, b) / (na * nb).sqrt();
    (1.0 - sim).clamp(0.0, 2.0)
}
