//! Exact k-nearest-neighbor lists in the input space.
//!
//! Row `i` of a [`NeighborIndex`] lists the `k_max` points closest to
//! anchor `i`, ascending by distance with ties broken by ascending id.
//! The anchor itself is never part of its row; [`NeighborIndex::neighborhood`]
//! prepends it.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metrics::Metric;

/// Anchors per parallel work item. Candidate rows are swept in tiles so a
/// tile stays in cache while every anchor of the block visits it.
const ANCHOR_BLOCK: usize = 16;
const CANDIDATE_TILE: usize = 128;

const CACHE_MAGIC: &[u8; 8] = b"QI2KNN\0\0";
const CACHE_VERSION: u32 = 1;

pub const PRECOMPUTED: &str = "precomputed";

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    n: usize,
    k_max: usize,
    neighbors: Vec<u32>,
    dists: Vec<f64>,
    metric: String,
}

#[inline]
fn by_distance_then_id(a: &(f64, u32), b: &(f64, u32)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

fn check_k_max(n: usize, k_max: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::DatasetTooSmall { n });
    }
    if k_max == 0 || k_max > n - 1 {
        return Err(Error::Config(format!(
            "k_max must be within 1..={} for {n} points, got {k_max}",
            n - 1
        )));
    }
    if n > u32::MAX as usize {
        return Err(Error::Config(format!("{n} points exceed the id range")));
    }
    Ok(())
}

/// Keeps the `k` smallest candidates of `buf` in order and writes them out.
fn select_row(buf: &mut [(f64, u32)], k: usize, ids: &mut [u32], dists: &mut [f64]) {
    if k < buf.len() {
        buf.select_nth_unstable_by(k - 1, by_distance_then_id);
    }
    let head = &mut buf[..k];
    head.sort_unstable_by(by_distance_then_id);
    for (j, &(d, id)) in head.iter().enumerate() {
        ids[j] = id;
        dists[j] = d;
    }
}

/// Builds the exact k-NN index of `dataset` under `metric`.
///
/// Work is spread over the current rayon pool; each anchor row is computed
/// independently so the result does not depend on the worker count.
pub fn build_index(dataset: &Dataset, metric: Metric, k_max: usize) -> Result<NeighborIndex> {
    let n = dataset.len();
    check_k_max(n, k_max)?;
    let dim = dataset.input_dim();
    let data = dataset.inputs().as_slice().expect("standard layout");
    metric.validate_rows(data, dim)?;

    let mut neighbors = vec![0u32; n * k_max];
    let mut dists = vec![0.0f64; n * k_max];
    neighbors
        .par_chunks_mut(ANCHOR_BLOCK * k_max)
        .zip(dists.par_chunks_mut(ANCHOR_BLOCK * k_max))
        .enumerate()
        .for_each(|(block, (ids_out, dists_out))| {
            let first = block * ANCHOR_BLOCK;
            let anchors = ids_out.len() / k_max;
            let mut bufs: Vec<Vec<(f64, u32)>> = vec![vec![(0.0, 0); n]; anchors];
            for tile_start in (0..n).step_by(CANDIDATE_TILE) {
                let tile_end = (tile_start + CANDIDATE_TILE).min(n);
                for (a, buf) in bufs.iter_mut().enumerate() {
                    let xa = &data[(first + a) * dim..(first + a + 1) * dim];
                    for j in tile_start..tile_end {
                        let xj = &data[j * dim..(j + 1) * dim];
                        buf[j] = (metric.eval(xa, xj), j as u32);
                    }
                }
            }
            for (a, buf) in bufs.iter_mut().enumerate() {
                // the anchor sorts after every finite candidate
                buf[first + a] = (f64::INFINITY, u32::MAX);
                select_row(
                    buf,
                    k_max,
                    &mut ids_out[a * k_max..(a + 1) * k_max],
                    &mut dists_out[a * k_max..(a + 1) * k_max],
                );
            }
        });

    Ok(NeighborIndex {
        n,
        k_max,
        neighbors,
        dists,
        metric: metric.name().to_string(),
    })
}

/// The `k` nearest neighbors of a single anchor, same ordering as a row of
/// [`build_index`]. Useful when `k` is too large for a full index.
pub fn nearest(dataset: &Dataset, metric: Metric, anchor: usize, k: usize) -> Result<(Vec<u32>, Vec<f64>)> {
    let n = dataset.len();
    check_k_max(n, k)?;
    if anchor >= n {
        return Err(Error::Config(format!("anchor {anchor} out of range for {n} points")));
    }
    let data = dataset.inputs().as_slice().expect("standard layout");
    let dim = dataset.input_dim();
    metric.validate_rows(data, dim)?;
    let xa = dataset.input(anchor);
    let mut buf: Vec<(f64, u32)> = data
        .chunks_exact(dim)
        .enumerate()
        .map(|(j, xj)| (metric.eval(xa, xj), j as u32))
        .collect();
    buf[anchor] = (f64::INFINITY, u32::MAX);
    let (mut ids, mut dists) = (vec![0u32; k], vec![0.0; k]);
    select_row(&mut buf, k, &mut ids, &mut dists);
    Ok((ids, dists))
}

/// Builds an index from an externally computed `n × n` distance matrix.
pub fn build_index_from_matrix(dist: &Array2<f64>, k_max: usize) -> Result<NeighborIndex> {
    const TOL: f64 = 1e-9;
    let n = dist.nrows();
    if dist.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: dist.ncols(),
        });
    }
    check_k_max(n, k_max)?;
    for i in 0..n {
        if !dist[(i, i)].is_finite() || dist[(i, i)].abs() > TOL {
            return Err(Error::InvalidData(format!(
                "distance matrix diagonal entry {i} is {}",
                dist[(i, i)]
            )));
        }
        for j in (i + 1)..n {
            let (a, b) = (dist[(i, j)], dist[(j, i)]);
            if !a.is_finite() || !b.is_finite() || a < -TOL || b < -TOL {
                return Err(Error::InvalidData(format!(
                    "distance ({i}, {j}) is negative or non-finite"
                )));
            }
            if (a - b).abs() > TOL {
                return Err(Error::InvalidData(format!(
                    "distance matrix is not symmetric at ({i}, {j}): {a} vs {b}"
                )));
            }
        }
    }

    let mut neighbors = vec![0u32; n * k_max];
    let mut dists = vec![0.0f64; n * k_max];
    neighbors
        .par_chunks_mut(k_max)
        .zip(dists.par_chunks_mut(k_max))
        .enumerate()
        .for_each(|(i, (ids_out, dists_out))| {
            let mut buf: Vec<(f64, u32)> = dist
                .row(i)
                .iter()
                .enumerate()
                .map(|(j, &d)| (d.max(0.0), j as u32))
                .collect();
            buf[i] = (f64::INFINITY, u32::MAX);
            select_row(&mut buf, k_max, ids_out, dists_out);
        });

    Ok(NeighborIndex {
        n,
        k_max,
        neighbors,
        dists,
        metric: PRECOMPUTED.to_string(),
    })
}

impl NeighborIndex {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// Name of the metric the index was built with, or `"precomputed"`.
    pub fn metric_name(&self) -> &str {
        &self.metric
    }

    /// Sorted neighbor ids of anchor `i` (anchor excluded).
    #[inline]
    pub fn row(&self, i: usize) -> &[u32] {
        &self.neighbors[i * self.k_max..(i + 1) * self.k_max]
    }

    #[inline]
    pub fn dist_row(&self, i: usize) -> &[f64] {
        &self.dists[i * self.k_max..(i + 1) * self.k_max]
    }

    /// The `k`-neighborhood of anchor `i`: `[i]` followed by its first `k`
    /// neighbors (`k + 1` points).
    pub fn neighborhood(&self, i: usize, k: usize) -> Result<Vec<usize>> {
        if i >= self.n {
            return Err(Error::Config(format!("anchor {i} out of range")));
        }
        if k == 0 || k > self.k_max {
            return Err(Error::Config(format!(
                "k must be within 1..={}, got {k}",
                self.k_max
            )));
        }
        Ok(std::iter::once(i)
            .chain(self.row(i)[..k].iter().map(|&j| j as usize))
            .collect())
    }

    /// Copy truncated to the first `k_max` neighbors of each row.
    pub fn truncated(&self, k_max: usize) -> Result<NeighborIndex> {
        if k_max == 0 || k_max > self.k_max {
            return Err(Error::Config(format!(
                "cannot truncate index with k_max {} to {k_max}",
                self.k_max
            )));
        }
        let mut neighbors = Vec::with_capacity(self.n * k_max);
        let mut dists = Vec::with_capacity(self.n * k_max);
        for i in 0..self.n {
            neighbors.extend_from_slice(&self.row(i)[..k_max]);
            dists.extend_from_slice(&self.dist_row(i)[..k_max]);
        }
        Ok(NeighborIndex {
            n: self.n,
            k_max,
            neighbors,
            dists,
            metric: self.metric.clone(),
        })
    }

    /// Writes the little-endian binary cache.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(32 + self.neighbors.len() * 12);
        buf.extend_from_slice(CACHE_MAGIC);
        buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.n as u64).to_le_bytes());
        buf.extend_from_slice(&(self.k_max as u64).to_le_bytes());
        buf.extend_from_slice(&(self.metric.len() as u32).to_le_bytes());
        buf.extend_from_slice(self.metric.as_bytes());
        for id in &self.neighbors {
            buf.extend_from_slice(&id.to_le_bytes());
        }
        for d in &self.dists {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<NeighborIndex> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = Reader::new(&bytes, path);
        if r.take(8)? != CACHE_MAGIC {
            return Err(Error::format(path, "not a neighbor index cache"));
        }
        let version = r.u32()?;
        if version != CACHE_VERSION {
            return Err(Error::format(path, format!("unsupported version {version}")));
        }
        let n = r.u64()? as usize;
        let k_max = r.u64()? as usize;
        let name_len = r.u32()? as usize;
        let metric = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::format(path, "metric name is not UTF-8"))?;
        check_k_max(n, k_max)?;
        let count = n * k_max;
        if r.remaining() != count * 12 {
            return Err(Error::Integrity(format!(
                "{}: expected {} payload bytes, found {}",
                path.display(),
                count * 12,
                r.remaining()
            )));
        }
        let neighbors = r
            .take(count * 4)?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let dists = r
            .take(count * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(NeighborIndex {
            n,
            k_max,
            neighbors,
            dists,
            metric,
        })
    }
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self { bytes, pos: 0, path }
    }

    pub(crate) fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Integrity(format!(
                "{}: truncated at byte {}",
                self.path.display(),
                self.pos
            ))),
        }
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}
