//! Mean-normalized pair distances and the QI2R score of a point set.
//!
//! For a subset of `m` points all `m²` ordered pairs count, self-pairs
//! included (their distance is 0). Each distance is divided by the mean
//! distance of its space plus a small absolute stabilizer, and QI2R is the
//! mean squared difference of the normalized input and output distances.
//!
//! Expanding the square gives a closed form over five running sums, which
//! is what makes growing neighborhoods cheap to evaluate:
//!
//! ```text
//! QI2R = ( S_II / A²  -  2 S_IO / (A B)  +  S_OO / B² ) / N
//! A = S_I / N + eps_I,   B = S_O / N + eps_O,   N = m²
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metrics::Metrics;

/// Relative stabilizer applied when none is configured.
pub const DEFAULT_EPSILON: f64 = 1e-9;

/// Number of random pairs used to estimate a space's global mean distance.
pub const STABILIZER_SAMPLE_PAIRS: usize = 100_000;

const STABILIZER_SEED: u64 = 0x5149_3252;

/// Absolute denominators added to the mean distance of each space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stabilizer {
    /// Relative factor the absolute values were derived from.
    pub relative: f64,
    pub input_mean: f64,
    pub output_mean: f64,
    pub input: f64,
    pub output: f64,
}

impl Stabilizer {
    /// `eps_abs = relative × global mean pair distance` per space.
    ///
    /// The global mean is exact when the dataset has at most
    /// [`STABILIZER_SAMPLE_PAIRS`] distinct pairs and otherwise estimated
    /// from a fixed-seed sample of that many pairs. A space whose mean is 0
    /// falls back to `relative` itself so the denominator stays positive.
    pub fn from_dataset(dataset: &Dataset, metrics: Metrics, relative: f64) -> Result<Self> {
        if !(relative.is_finite() && relative > 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be a positive number, got {relative}"
            )));
        }
        let n = dataset.len();
        if n < 2 {
            return Err(Error::DatasetTooSmall { n });
        }
        let data_in = dataset.inputs().as_slice().expect("standard layout");
        let data_out = dataset.outputs().as_slice().expect("standard layout");
        metrics.input.validate_rows(data_in, dataset.input_dim())?;
        metrics.output.validate_rows(data_out, dataset.output_dim())?;

        let mut sum_in = 0.0;
        let mut sum_out = 0.0;
        let mut visit = |i: usize, j: usize| {
            sum_in += metrics.input.eval(dataset.input(i), dataset.input(j));
            sum_out += metrics.output.eval(dataset.output(i), dataset.output(j));
        };
        let distinct = n * (n - 1) / 2;
        let count = if distinct <= STABILIZER_SAMPLE_PAIRS {
            for i in 0..n {
                for j in (i + 1)..n {
                    visit(i, j);
                }
            }
            distinct
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(STABILIZER_SEED);
            let mut drawn = 0;
            while drawn < STABILIZER_SAMPLE_PAIRS {
                let i = rng.random_range(0..n);
                let j = rng.random_range(0..n);
                if i != j {
                    visit(i, j);
                    drawn += 1;
                }
            }
            drawn
        };
        let input_mean = sum_in / count as f64;
        let output_mean = sum_out / count as f64;
        Ok(Self::from_means(relative, input_mean, output_mean))
    }

    pub fn from_means(relative: f64, input_mean: f64, output_mean: f64) -> Self {
        let abs = |mean: f64| if mean > 0.0 { relative * mean } else { relative };
        Self {
            relative,
            input_mean,
            output_mean,
            input: abs(input_mean),
            output: abs(output_mean),
        }
    }
}

/// Running sums over all ordered pairs of a point set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PairSums {
    pub s_i: f64,
    pub s_o: f64,
    pub s_ii: f64,
    pub s_oo: f64,
    pub s_io: f64,
    /// Number of points `m`; the pair count is `m²`.
    pub points: usize,
}

impl PairSums {
    pub fn pair_count(&self) -> usize {
        self.points * self.points
    }

    /// Sums over every ordered pair of `ids`.
    pub fn from_subset(ids: &[usize], dataset: &Dataset, metrics: Metrics) -> Result<Self> {
        check_ids(ids, dataset)?;
        let mut sums = PairSums::default();
        for (a, &i) in ids.iter().enumerate() {
            for &j in &ids[..a] {
                let (di, dout) = pair_distances(dataset, metrics, i, j);
                sums.add_unordered(di, dout);
            }
            sums.points += 1;
        }
        Ok(sums)
    }

    /// Adds one unordered pair, which contributes both orderings.
    #[inline]
    pub fn add_unordered(&mut self, d_in: f64, d_out: f64) {
        self.s_i += 2.0 * d_in;
        self.s_o += 2.0 * d_out;
        self.s_ii += 2.0 * d_in * d_in;
        self.s_oo += 2.0 * d_out * d_out;
        self.s_io += 2.0 * d_in * d_out;
    }

    pub fn qi2r(&self, stab: &Stabilizer) -> f64 {
        qi2r_from_sums(self, stab)
    }
}

#[inline]
pub(crate) fn pair_distances(ds: &Dataset, metrics: Metrics, i: usize, j: usize) -> (f64, f64) {
    (
        metrics.input.eval(ds.input(i), ds.input(j)),
        metrics.output.eval(ds.output(i), ds.output(j)),
    )
}

fn check_ids(ids: &[usize], dataset: &Dataset) -> Result<()> {
    if let Some(&bad) = ids.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::Config(format!(
            "point id {bad} out of range for {} points",
            dataset.len()
        )));
    }
    Ok(())
}

/// QI2R from running sums. Never negative; 0 for an empty or single-point
/// set.
pub fn qi2r_from_sums(sums: &PairSums, stab: &Stabilizer) -> f64 {
    if sums.points == 0 {
        return 0.0;
    }
    let n = sums.pair_count() as f64;
    let a = sums.s_i / n + stab.input;
    let b = sums.s_o / n + stab.output;
    let v = (sums.s_ii / (a * a) - 2.0 * sums.s_io / (a * b) + sums.s_oo / (b * b)) / n;
    v.max(0.0)
}

/// Returns `sums` extended by point `new_id`, given the ids already in the
/// set. The self-pair adds nothing to the sums but grows the pair count.
pub fn update_sums_add_point(
    sums: &PairSums,
    new_id: usize,
    existing_ids: &[usize],
    dataset: &Dataset,
    metrics: Metrics,
) -> Result<PairSums> {
    check_ids(existing_ids, dataset)?;
    check_ids(&[new_id], dataset)?;
    if existing_ids.contains(&new_id) {
        return Err(Error::Config(format!("point {new_id} is already in the set")));
    }
    if existing_ids.len() != sums.points {
        return Err(Error::Config(format!(
            "sums cover {} points but {} ids were given",
            sums.points,
            existing_ids.len()
        )));
    }
    let mut out = *sums;
    for &s in existing_ids {
        let (di, dout) = pair_distances(dataset, metrics, new_id, s);
        out.add_unordered(di, dout);
    }
    out.points += 1;
    Ok(out)
}

/// Literal evaluation over all `m²` ordered pairs; the reference the
/// incremental path is checked against.
pub fn qi2r_direct(
    subset_ids: &[usize],
    dataset: &Dataset,
    metrics: Metrics,
    stab: &Stabilizer,
) -> Result<f64> {
    let m = subset_ids.len();
    if m < 2 {
        return Err(Error::DatasetTooSmall { n: m });
    }
    check_ids(subset_ids, dataset)?;
    let mut d_in = Vec::with_capacity(m * m);
    let mut d_out = Vec::with_capacity(m * m);
    for &p in subset_ids {
        for &q in subset_ids {
            d_in.push(metrics.input.distance(dataset.input(p), dataset.input(q))?);
            d_out.push(metrics.output.distance(dataset.output(p), dataset.output(q))?);
        }
    }
    let pairs = (m * m) as f64;
    let mean_in = d_in.iter().sum::<f64>() / pairs + stab.input;
    let mean_out = d_out.iter().sum::<f64>() / pairs + stab.output;
    let total: f64 = d_in
        .iter()
        .zip(&d_out)
        .map(|(a, b)| {
            let diff = a / mean_in - b / mean_out;
            diff * diff
        })
        .sum();
    Ok(total / pairs)
}
