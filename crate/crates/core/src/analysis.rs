//! Global statistics and trajectory detectors over a local score matrix.
//!
//! Detectors look at the full per-anchor trajectory `values(i, 1..=k_max)`,
//! including entries masked as duplicate neighborhoods: a masked entry
//! carries the score of the very same set seen from an earlier anchor.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Labels};
use crate::error::{Error, Result};
use crate::knn::NeighborIndex;
use crate::metrics::Metrics;
use crate::qi2::{pair_distances, Mlqi2Matrix, PairSums, Stabilizer};

/// QI2R over every ordered pair of the dataset.
pub fn global_qi2r(dataset: &Dataset, metrics: Metrics, epsilon: f64) -> Result<f64> {
    let stab = Stabilizer::from_dataset(dataset, metrics, epsilon)?;
    global_qi2r_with(dataset, metrics, &stab)
}

pub fn global_qi2r_with(dataset: &Dataset, metrics: Metrics, stab: &Stabilizer) -> Result<f64> {
    let n = dataset.len();
    if n < 2 {
        return Err(Error::DatasetTooSmall { n });
    }
    metrics.input.validate_rows(
        dataset.inputs().as_slice().expect("standard layout"),
        dataset.input_dim(),
    )?;
    metrics.output.validate_rows(
        dataset.outputs().as_slice().expect("standard layout"),
        dataset.output_dim(),
    )?;
    // per-row partial sums, folded in row order so the result is thread-count independent
    let rows: Vec<[f64; 5]> = (1..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = [0.0; 5];
            for j in 0..i {
                let (di, dout) = pair_distances(dataset, metrics, i, j);
                acc[0] += di;
                acc[1] += dout;
                acc[2] += di * di;
                acc[3] += dout * dout;
                acc[4] += di * dout;
            }
            acc
        })
        .collect();
    let mut sums = PairSums {
        points: n,
        ..PairSums::default()
    };
    for r in rows {
        sums.s_i += 2.0 * r[0];
        sums.s_o += 2.0 * r[1];
        sums.s_ii += 2.0 * r[2];
        sums.s_oo += 2.0 * r[3];
        sums.s_io += 2.0 * r[4];
    }
    Ok(sums.qi2r(stab))
}

/// Empirical distribution of the valid entries of one column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub k: usize,
    /// `bins + 1` edges of the density histogram.
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
    /// Sorted distinct values with the fraction of entries `<=` each.
    pub cdf: Vec<(f64, f64)>,
}

impl Distribution {
    /// Fraction of entries `<= x`.
    pub fn cdf_at(&self, x: f64) -> f64 {
        match self.cdf.partition_point(|&(v, _)| v <= x) {
            0 => 0.0,
            p => self.cdf[p - 1].1,
        }
    }
}

pub fn qi2r_distribution(matrix: &Mlqi2Matrix, k: usize, bins: usize) -> Result<Distribution> {
    if k == 0 || k > matrix.k_max() {
        return Err(Error::Config(format!("k must be in 1..={}, got {k}", matrix.k_max())));
    }
    if bins == 0 {
        return Err(Error::Config("bins must be at least 1".into()));
    }
    let mut values = matrix.column(k);
    if values.is_empty() {
        return Err(Error::InvalidData(format!("column k={k} has no valid entries")));
    }
    values.sort_by(f64::total_cmp);
    let total = values.len() as f64;
    let (lo, hi) = (values[0], values[values.len() - 1]);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges: Vec<f64> = (0..=bins).map(|b| lo + b as f64 * width).collect();
    let mut counts = vec![0usize; bins];
    for &v in &values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let density = counts.iter().map(|&c| c as f64 / (total * width)).collect();

    let mut cdf: Vec<(f64, f64)> = Vec::new();
    for (idx, &v) in values.iter().enumerate() {
        let frac = (idx + 1) as f64 / total;
        match cdf.last_mut() {
            Some(last) if last.0 == v => last.1 = frac,
            _ => cdf.push((v, frac)),
        }
    }
    if let Some(last) = cdf.last_mut() {
        last.1 = 1.0;
    }
    Ok(Distribution {
        k,
        edges,
        density,
        cdf,
    })
}

/// Thresholds for all detectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Open interval the homogeneous trajectory must stay in.
    pub homog_band: (f64, f64),
    pub homog_k_range: (usize, usize),
    pub ood_k_range: (usize, usize),
    /// Required lift above the homogeneous characteristic.
    pub ood_margin: f64,
    pub ood_max: f64,
    /// Percentile of homogeneous trajectories used as the characteristic.
    pub ood_percentile: f64,
    pub outlier_k1_max: f64,
    pub outlier_rise_k_range: (usize, usize),
    pub outlier_spike_min: f64,
    pub simple_low_max: f64,
    pub simple_persistence: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            homog_band: (1.0, 2.0),
            homog_k_range: (10, 300),
            ood_k_range: (20, 40),
            ood_margin: 0.05,
            ood_max: 2.0,
            ood_percentile: 0.9,
            outlier_k1_max: 0.5,
            outlier_rise_k_range: (5, 25),
            outlier_spike_min: 10.0,
            simple_low_max: 0.3,
            simple_persistence: 20,
        }
    }
}

fn check_range(name: &str, (lo, hi): (usize, usize)) -> Result<()> {
    if lo == 0 || lo > hi {
        return Err(Error::Config(format!("{name} must satisfy 1 <= lo <= hi, got [{lo}, {hi}]")));
    }
    Ok(())
}

fn positive(name: &str, x: f64) -> Result<()> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::Config(format!("{name} must be positive, got {x}")));
    }
    Ok(())
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        check_range("homog_k_range", self.homog_k_range)?;
        check_range("ood_k_range", self.ood_k_range)?;
        check_range("outlier_rise_k_range", self.outlier_rise_k_range)?;
        let (lo, hi) = self.homog_band;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!("homog_band must be a non-empty interval, got ({lo}, {hi})")));
        }
        if !(self.ood_margin >= 0.0 && self.ood_margin.is_finite()) {
            return Err(Error::Config(format!("ood_margin must be non-negative, got {}", self.ood_margin)));
        }
        positive("ood_max", self.ood_max)?;
        if !(self.ood_percentile > 0.0 && self.ood_percentile <= 1.0) {
            return Err(Error::Config(format!("ood_percentile must be in (0, 1], got {}", self.ood_percentile)));
        }
        positive("outlier_k1_max", self.outlier_k1_max)?;
        positive("outlier_spike_min", self.outlier_spike_min)?;
        positive("simple_low_max", self.simple_low_max)?;
        if self.simple_persistence == 0 {
            return Err(Error::Config("simple_persistence must be at least 1".into()));
        }
        Ok(())
    }
}

/// Clips `range` to `1..=k_max`; an empty result is a config error.
fn clip(name: &str, (lo, hi): (usize, usize), k_max: usize) -> Result<(usize, usize)> {
    let (lo, hi) = (lo.max(1), hi.min(k_max));
    if lo > hi {
        return Err(Error::Config(format!("{name} does not intersect 1..={k_max}")));
    }
    Ok((lo, hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flagged {
    pub id: usize,
    /// `(k, value)` pairs that satisfied the detector.
    pub evidence: Vec<(usize, f64)>,
    /// The single entry reported in tables.
    pub trigger: (usize, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub detector: String,
    pub config: DetectorConfig,
    pub flagged: Vec<Flagged>,
}

impl DetectionReport {
    pub fn ids(&self) -> Vec<usize> {
        self.flagged.iter().map(|f| f.id).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.flagged.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn report(
    name: &str,
    config: &DetectorConfig,
    n: usize,
    f: impl Fn(usize) -> Option<Flagged> + Sync + Send,
) -> DetectionReport {
    let flagged = (0..n).into_par_iter().filter_map(f).collect();
    DetectionReport {
        detector: name.into(),
        config: config.clone(),
        flagged,
    }
}

fn need_labels<'a>(labels: Option<&'a Labels>, n: usize, name: &str) -> Result<&'a Labels> {
    let labels = labels.ok_or_else(|| Error::Config(format!("the {name} detector requires labels")))?;
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: labels.len(),
        });
    }
    Ok(labels)
}

fn segment(matrix: &Mlqi2Matrix, i: usize, (lo, hi): (usize, usize)) -> Vec<(usize, f64)> {
    (lo..=hi).map(|k| (k, matrix.value(i, k))).collect()
}

/// Points whose trajectory stays inside the homogeneous band over the
/// whole configured k-range.
pub fn detect_homogeneous(matrix: &Mlqi2Matrix, config: &DetectorConfig) -> Result<DetectionReport> {
    config.validate()?;
    let range = clip("homog_k_range", config.homog_k_range, matrix.k_max())?;
    let (lo, hi) = config.homog_band;
    Ok(report("homogeneous", config, matrix.len(), |i| {
        let seg = segment(matrix, i, range);
        if seg.iter().all(|&(_, v)| v > lo && v < hi) {
            let trigger = seg[seg.len() - 1];
            Some(Flagged {
                id: i,
                evidence: seg,
                trigger,
            })
        } else {
            None
        }
    }))
}

/// Number of leading neighbors of `i` sharing its label.
fn same_label_run(labels: &Labels, index: &NeighborIndex, i: usize) -> usize {
    let own = labels.code(i);
    index
        .row(i)
        .iter()
        .position(|&j| labels.code(j as usize) != own)
        .unwrap_or(index.k_max())
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let (a, b) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[a] + (sorted[b] - sorted[a]) * (pos - a as f64)
}

/// Per-k percentile of the homogeneous-flagged trajectories over
/// `ood_k_range`; `None` when no point is homogeneous.
pub fn homogeneous_characteristic(
    matrix: &Mlqi2Matrix,
    config: &DetectorConfig,
) -> Result<Option<Vec<(usize, f64)>>> {
    let homog = detect_homogeneous(matrix, config)?;
    if homog.is_empty() {
        return Ok(None);
    }
    let (lo, hi) = clip("ood_k_range", config.ood_k_range, matrix.k_max())?;
    let curve = (lo..=hi)
        .map(|k| {
            let mut col: Vec<f64> = homog.flagged.iter().map(|f| matrix.value(f.id, k)).collect();
            col.sort_by(f64::total_cmp);
            (k, percentile(&col, config.ood_percentile))
        })
        .collect();
    Ok(Some(curve))
}

/// Points sitting above the homogeneous characteristic (plus margin) and
/// below `ood_max` over the whole OoD k-range, with no foreign-label
/// neighbor up to the top of that range.
pub fn detect_ood(
    matrix: &Mlqi2Matrix,
    labels: Option<&Labels>,
    index: &NeighborIndex,
    config: &DetectorConfig,
) -> Result<DetectionReport> {
    config.validate()?;
    let labels = need_labels(labels, matrix.len(), "ood")?;
    check_index(matrix, index)?;
    let (_, hi) = clip("ood_k_range", config.ood_k_range, matrix.k_max())?;
    let Some(curve) = homogeneous_characteristic(matrix, config)? else {
        return Ok(report("ood", config, 0, |_| None));
    };
    Ok(report("ood", config, matrix.len(), |i| {
        if same_label_run(labels, index, i) < hi {
            return None;
        }
        let lifts = curve.iter().all(|&(k, c)| {
            let v = matrix.value(i, k);
            v > c + config.ood_margin && v < config.ood_max
        });
        if !lifts {
            return None;
        }
        let evidence: Vec<(usize, f64)> = curve.iter().map(|&(k, _)| (k, matrix.value(i, k))).collect();
        let trigger = evidence
            .iter()
            .zip(&curve)
            .max_by(|a, b| (a.0 .1 - a.1 .1).total_cmp(&(b.0 .1 - b.1 .1)))
            .map(|(e, _)| *e)
            .expect("non-empty range");
        Some(Flagged {
            id: i,
            evidence,
            trigger,
        })
    }))
}

fn check_index(matrix: &Mlqi2Matrix, index: &NeighborIndex) -> Result<()> {
    if index.len() != matrix.len() || index.k_max() < matrix.k_max() {
        return Err(Error::DimensionMismatch {
            expected: matrix.len(),
            actual: index.len(),
        });
    }
    Ok(())
}

/// Low score at `k = 1` followed by a spike inside the rise range, where
/// the anchor's label is a minority among its first `k` neighbors at the
/// spike. The label condition separates the misplaced point from the
/// same-class points that merely have it as their nearest neighbor.
pub fn detect_outliers(
    matrix: &Mlqi2Matrix,
    labels: Option<&Labels>,
    index: &NeighborIndex,
    config: &DetectorConfig,
) -> Result<DetectionReport> {
    config.validate()?;
    let labels = need_labels(labels, matrix.len(), "outliers")?;
    check_index(matrix, index)?;
    let (lo, hi) = clip("outlier_rise_k_range", config.outlier_rise_k_range, matrix.k_max())?;
    Ok(report("outliers", config, matrix.len(), |i| {
        let v1 = matrix.value(i, 1);
        if v1 > config.outlier_k1_max {
            return None;
        }
        let (k, peak) = (lo..=hi)
            .map(|k| (k, matrix.value(i, k)))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .expect("non-empty range");
        if peak < config.outlier_spike_min {
            return None;
        }
        let own = labels.code(i);
        let same = index.row(i)[..k]
            .iter()
            .filter(|&&j| labels.code(j as usize) == own)
            .count();
        if 2 * same >= k {
            return None;
        }
        Some(Flagged {
            id: i,
            evidence: vec![(1, v1), (k, peak)],
            trigger: (k, peak),
        })
    }))
}

/// At least `simple_persistence` consecutive k with score `<= simple_low_max`.
pub fn detect_simple_subsets(matrix: &Mlqi2Matrix, config: &DetectorConfig) -> Result<DetectionReport> {
    config.validate()?;
    Ok(report("simple-subsets", config, matrix.len(), |i| {
        let row = matrix.row(i);
        let (mut best, mut start) = ((0, 0), None);
        for (c, &v) in row.iter().enumerate() {
            if v <= config.simple_low_max {
                let s = *start.get_or_insert(c);
                if c + 1 - s > best.1 - best.0 {
                    best = (s, c + 1);
                }
            } else {
                start = None;
            }
        }
        if best.1 - best.0 < config.simple_persistence {
            return None;
        }
        let evidence: Vec<(usize, f64)> = (best.0..best.1).map(|c| (c + 1, row[c])).collect();
        Some(Flagged {
            id: i,
            trigger: evidence[0],
            evidence,
        })
    }))
}

/// For each `k`, the number of points whose first `k` neighbors all share
/// the point's label.
pub fn homogeneous_cluster_counts(
    labels: &Labels,
    index: &NeighborIndex,
    k_list: &[usize],
) -> Result<Vec<(usize, usize)>> {
    if labels.len() != index.len() {
        return Err(Error::DimensionMismatch {
            expected: index.len(),
            actual: labels.len(),
        });
    }
    if let Some(&k) = k_list.iter().find(|&&k| k == 0 || k > index.k_max()) {
        return Err(Error::Config(format!("k must be in 1..={}, got {k}", index.k_max())));
    }
    let runs: Vec<usize> = (0..index.len())
        .into_par_iter()
        .map(|i| same_label_run(labels, index, i))
        .collect();
    Ok(k_list
        .iter()
        .map(|&k| (k, runs.iter().filter(|&&r| r >= k).count()))
        .collect())
}

/// Ids with at least one valid entry inside the k- and value-ranges
/// (both inclusive).
pub fn select_region(
    matrix: &Mlqi2Matrix,
    k_range: (usize, usize),
    value_range: (f64, f64),
) -> Result<Vec<usize>> {
    let (vlo, vhi) = value_range;
    if k_range.0 > k_range.1 || vlo.is_nan() || vhi.is_nan() || vlo > vhi {
        return Err(Error::Config(format!(
            "inverted selection range k={k_range:?} value={value_range:?}"
        )));
    }
    let (klo, khi) = (k_range.0.max(1), k_range.1.min(matrix.k_max()));
    if klo > khi {
        return Ok(Vec::new());
    }
    Ok((0..matrix.len())
        .into_par_iter()
        .filter(|&i| {
            (klo..=khi).any(|k| {
                matrix.is_valid(i, k) && {
                    let v = matrix.value(i, k);
                    v >= vlo && v <= vhi
                }
            })
        })
        .collect())
}
