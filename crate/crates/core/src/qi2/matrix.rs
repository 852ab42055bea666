//! Local QI2R over growing neighborhoods of every anchor.

use std::collections::HashMap;

use rayon::prelude::*;

use super::sums::{PairSums, Stabilizer};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::knn::NeighborIndex;
use crate::metrics::Metrics;

/// `n × k_max` local scores plus the duplicate-neighborhood mask.
///
/// Column `k` (1-based) holds QI2R of `neighborhood(i, k)`. An entry is
/// invalid when an anchor with a smaller id has exactly the same
/// neighborhood set at that `k`; its value is still the score of that set.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlqi2Matrix {
    n: usize,
    k_max: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl Mlqi2Matrix {
    pub fn from_parts(n: usize, k_max: usize, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if values.len() != n * k_max || valid.len() != n * k_max {
            return Err(Error::DimensionMismatch {
                expected: n * k_max,
                actual: values.len().min(valid.len()),
            });
        }
        if let Some(p) = values
            .iter()
            .zip(&valid)
            .position(|(v, &ok)| ok && !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::InvalidData(format!(
                "entry ({}, {}) is not a finite non-negative value",
                p / k_max,
                p % k_max + 1
            )));
        }
        Ok(Self {
            n,
            k_max,
            values,
            valid,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    #[inline]
    pub fn value(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.k_max + k - 1]
    }

    #[inline]
    pub fn is_valid(&self, i: usize, k: usize) -> bool {
        self.valid[i * self.k_max + k - 1]
    }

    /// Scores of anchor `i` for `k = 1..=k_max`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.k_max..(i + 1) * self.k_max]
    }

    pub fn valid_row(&self, i: usize) -> &[bool] {
        &self.valid[i * self.k_max..(i + 1) * self.k_max]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.valid
    }

    /// `(k, value)` pairs of the valid entries of anchor `i`.
    pub fn trajectory(&self, i: usize) -> Vec<(usize, f64)> {
        self.row(i)
            .iter()
            .zip(self.valid_row(i))
            .enumerate()
            .filter(|(_, (_, &ok))| ok)
            .map(|(k, (&v, _))| (k + 1, v))
            .collect()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Valid values of column `k`.
    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.n)
            .filter(|&i| self.is_valid(i, k))
            .map(|i| self.value(i, k))
            .collect()
    }

    /// Largest valid value, if any entry is valid.
    pub fn max_valid(&self) -> Option<f64> {
        self.values
            .iter()
            .zip(&self.valid)
            .filter(|(_, &ok)| ok)
            .map(|(&v, _)| v)
            .reduce(f64::max)
    }
}

/// Scores of one anchor's growing neighborhood, `k = 1..=neighbors.len()`.
///
/// Each step adds the distances from the new point to the current members,
/// so the cost is `O(k²)` distance evaluations for the whole trajectory.
pub fn anchor_trajectory(
    dataset: &Dataset,
    anchor: usize,
    neighbors: &[u32],
    metrics: Metrics,
    stab: &Stabilizer,
) -> Vec<f64> {
    let mut members = Vec::with_capacity(neighbors.len() + 1);
    members.push(anchor);
    let mut sums = PairSums {
        points: 1,
        ..PairSums::default()
    };
    let mut out = Vec::with_capacity(neighbors.len());
    for &next in neighbors {
        let next = next as usize;
        let (xn, yn) = (dataset.input(next), dataset.output(next));
        let (mut si, mut so, mut sii, mut soo, mut sio) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &m in &members {
            let di = metrics.input.eval(xn, dataset.input(m));
            let dout = metrics.output.eval(yn, dataset.output(m));
            si += di;
            so += dout;
            sii += di * di;
            soo += dout * dout;
            sio += di * dout;
        }
        sums.s_i += 2.0 * si;
        sums.s_o += 2.0 * so;
        sums.s_ii += 2.0 * sii;
        sums.s_oo += 2.0 * soo;
        sums.s_io += 2.0 * sio;
        sums.points += 1;
        members.push(next);
        out.push(sums.qi2r(stab));
    }
    out
}

#[inline]
fn mix(id: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = id.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-independent 64-bit hash of an id set.
pub fn set_fingerprint(ids: impl IntoIterator<Item = usize>) -> u64 {
    ids.into_iter()
        .fold(0u64, |h, id| h.wrapping_add(mix(id as u64)))
}

fn same_set(index: &NeighborIndex, i: usize, j: usize, k: usize) -> bool {
    let sorted = |a: usize| {
        let mut v: Vec<u32> = index.row(a)[..k].to_vec();
        v.push(a as u32);
        v.sort_unstable();
        v
    };
    sorted(i) == sorted(j)
}

/// Validity mask: entry `(i, k)` is false iff some anchor `j < i` has the
/// same `k`-neighborhood set. Fingerprints pick candidates, an exact set
/// comparison decides.
pub fn neighborhood_mask(index: &NeighborIndex) -> Vec<bool> {
    let (n, k_max) = (index.len(), index.k_max());
    let fingerprints: Vec<u64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut h = mix(i as u64);
            index.row(i).iter().map(move |&j| {
                h = h.wrapping_add(mix(u64::from(j)));
                h
            })
        })
        .collect();

    let columns: Vec<Vec<bool>> = (1..=k_max)
        .into_par_iter()
        .map(|k| {
            let mut firsts: HashMap<u64, Vec<usize>> = HashMap::with_capacity(n);
            let mut col = vec![true; n];
            for (i, ok) in col.iter_mut().enumerate() {
                let reps = firsts.entry(fingerprints[i * k_max + k - 1]).or_default();
                if reps.iter().any(|&j| same_set(index, i, j, k)) {
                    *ok = false;
                } else {
                    reps.push(i);
                }
            }
            col
        })
        .collect();

    let mut mask = vec![true; n * k_max];
    for (c, col) in columns.iter().enumerate() {
        for (i, &ok) in col.iter().enumerate() {
            mask[i * k_max + c] = ok;
        }
    }
    mask
}

/// Computes the full local score matrix for every anchor of `index`.
pub fn compute_mlqi2(
    dataset: &Dataset,
    index: &NeighborIndex,
    metrics: Metrics,
    stab: &Stabilizer,
) -> Result<Mlqi2Matrix> {
    if index.len() != dataset.len() {
        return Err(Error::DimensionMismatch {
            expected: dataset.len(),
            actual: index.len(),
        });
    }
    metrics.input.validate_rows(
        dataset.inputs().as_slice().expect("standard layout"),
        dataset.input_dim(),
    )?;
    metrics.output.validate_rows(
        dataset.outputs().as_slice().expect("standard layout"),
        dataset.output_dim(),
    )?;
    let (n, k_max) = (index.len(), index.k_max());
    let mut values = vec![0.0f64; n * k_max];
    values
        .par_chunks_mut(k_max)
        .enumerate()
        .for_each(|(i, row)| {
            row.copy_from_slice(&anchor_trajectory(dataset, i, index.row(i), metrics, stab));
        });
    let valid = neighborhood_mask(index);
    Mlqi2Matrix::from_parts(n, k_max, values, valid)
}
