//! Binary result container: a self-describing JSON header followed by the
//! score matrix, its validity mask and the histogram grid.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "QI2RES\0\0"  u32 version  u64 header_len  header (UTF-8 JSON)
//! f64 values[n·k_max]  u8 mask[ceil(n·k_max / 8)]  (bit j of byte b = entry 8b + j)
//! u64 counts[bins·k_max]  f64 grid[bins·k_max]
//! [u8; 32] SHA-256 of everything before it
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::DetectorConfig;
use crate::error::{Error, Result};
use crate::knn::Reader;
use crate::metrics::Metrics;
use crate::qi2::{ColumnNorm, HistogramParams, Mlqi2Matrix, OverflowPolicy, Shlqi2Grid, Stabilizer};

const MAGIC: &[u8; 8] = b"QI2RES\0\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContainerHeader {
    pub n: usize,
    pub k_max: usize,
    pub bins: usize,
    pub bin_min: f64,
    pub bin_width: f64,
    pub gamma: f64,
    pub column_norm: ColumnNorm,
    pub overflow: OverflowPolicy,
    pub metrics: Metrics,
    pub epsilon: Stabilizer,
    pub dataset_fingerprint: String,
    pub global_qi2r: Option<f64>,
    pub detector_defaults: DetectorConfig,
}

impl ContainerHeader {
    pub fn new(
        matrix: &Mlqi2Matrix,
        grid: &Shlqi2Grid,
        metrics: Metrics,
        epsilon: Stabilizer,
        dataset_fingerprint: impl Into<String>,
    ) -> Self {
        let p = grid.params;
        Self {
            n: matrix.len(),
            k_max: matrix.k_max(),
            bins: p.bin_count,
            bin_min: p.bin_min,
            bin_width: p.bin_width,
            gamma: p.gamma,
            column_norm: p.column_norm,
            overflow: p.overflow,
            metrics,
            epsilon,
            dataset_fingerprint: dataset_fingerprint.into(),
            global_qi2r: None,
            detector_defaults: DetectorConfig::default(),
        }
    }

    pub fn histogram_params(&self) -> HistogramParams {
        HistogramParams {
            bin_min: self.bin_min,
            bin_width: self.bin_width,
            bin_count: self.bins,
            gamma: self.gamma,
            column_norm: self.column_norm,
            overflow: self.overflow,
        }
    }
}

/// Everything stored in one container file.
#[derive(Debug, Clone, PartialEq)]
pub struct Results {
    pub header: ContainerHeader,
    pub matrix: Mlqi2Matrix,
    pub grid: Shlqi2Grid,
}

impl Results {
    pub fn new(header: ContainerHeader, matrix: Mlqi2Matrix, grid: Shlqi2Grid) -> Result<Self> {
        if header.n != matrix.len()
            || header.k_max != matrix.k_max()
            || grid.k_max != matrix.k_max()
            || header.histogram_params() != grid.params
        {
            return Err(Error::InvalidData(
                "header does not describe the matrix and grid".into(),
            ));
        }
        Ok(Self {
            header,
            matrix,
            grid,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let cells = self.matrix.len() * self.matrix.k_max();
        let grid_cells = self.grid.grid.len();
        let mut buf = Vec::with_capacity(60 + header.len() + cells * 8 + cells / 8 + grid_cells * 16);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header);
        for v in self.matrix.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut bits = vec![0u8; cells.div_ceil(8)];
        for (j, _) in self.matrix.mask().iter().enumerate().filter(|(_, &ok)| ok) {
            bits[j / 8] |= 1 << (j % 8);
        }
        buf.extend_from_slice(&bits);
        for c in &self.grid.counts {
            buf.extend_from_slice(&c.to_le_bytes());
        }
        for g in &self.grid.grid {
            buf.extend_from_slice(&g.to_le_bytes());
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        if r.take(8)? != MAGIC {
            return Err(Error::format(path, "not a result container"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(path, format!("unsupported container version {version}")));
        }
        if bytes.len() < 32 {
            return Err(Error::Integrity(format!("{}: truncated", path.display())));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        let header_len = r.u64()? as usize;
        let header: ContainerHeader = serde_json::from_slice(r.take(header_len)?)
            .map_err(|e| Error::format(path, format!("header: {e}")))?;
        let cells = header
            .n
            .checked_mul(header.k_max)
            .ok_or_else(|| Error::format(path, "absurd matrix shape"))?;
        let grid_cells = header
            .bins
            .checked_mul(header.k_max)
            .ok_or_else(|| Error::format(path, "absurd grid shape"))?;
        let expected = cells * 8 + cells.div_ceil(8) + grid_cells * 16 + 32;
        if r.remaining() != expected {
            return Err(Error::Integrity(format!(
                "{}: expected {expected} payload bytes after the header, found {}",
                path.display(),
                r.remaining()
            )));
        }
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Integrity(format!("{}: checksum mismatch", path.display())));
        }
        let values = f64s(r.take(cells * 8)?);
        let bits = r.take(cells.div_ceil(8))?;
        let valid = (0..cells).map(|j| bits[j / 8] >> (j % 8) & 1 == 1).collect();
        let counts = r
            .take(grid_cells * 8)?
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let grid_values = f64s(r.take(grid_cells * 8)?);

        let matrix = Mlqi2Matrix::from_parts(header.n, header.k_max, values, valid)?;
        let params = header.histogram_params();
        let grid = Shlqi2Grid {
            params,
            k_max: header.k_max,
            counts,
            grid: grid_values,
        };
        if grid.grid.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(Error::Integrity(format!("{}: grid values outside [0, 1]", path.display())));
        }
        Results::new(header, matrix, grid)
    }
}

fn f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect()
}

pub fn save_results(results: &Results, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, results.to_bytes()?).map_err(|e| Error::io(path, e))
}

/// Reads a container; with `fingerprint` set, refuses results computed on
/// a different dataset.
pub fn load_results(path: impl AsRef<Path>, fingerprint: Option<&str>) -> Result<Results> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let results = Results::from_bytes(&bytes, path)?;
    if let Some(actual) = fingerprint {
        if results.header.dataset_fingerprint != actual {
            return Err(Error::FingerprintMismatch {
                stored: results.header.dataset_fingerprint.clone(),
                actual: actual.into(),
            });
        }
    }
    Ok(results)
}
