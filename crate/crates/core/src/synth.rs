//! Seeded synthetic datasets with a known structure.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{Dataset, Labels};
use crate::error::Result;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Labeled classification data: 2-D points with the class code as the
/// single output value.
pub fn labeled(points: Vec<[f64; 2]>, classes: Vec<u32>) -> Result<Dataset> {
    let n = points.len();
    let x = Array2::from_shape_fn((n, 2), |(i, j)| points[i][j]);
    let y = Array2::from_shape_fn((n, 1), |(i, _)| f64::from(classes[i]));
    Dataset::from_parts(x, y)?.with_labels(Labels::from_codes(classes))
}

/// Unit-variance 2-D Gaussian blobs, one class per center; point ids run
/// blob by blob.
pub fn gaussian_blobs(per_blob: usize, centers: &[[f64; 2]], seed: u64) -> Result<Dataset> {
    let mut r = rng(seed);
    let mut points = Vec::with_capacity(per_blob * centers.len());
    let mut classes = Vec::with_capacity(per_blob * centers.len());
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_blob {
            points.push([center[0] + normal(&mut r), center[1] + normal(&mut r)]);
            classes.push(c as u32);
        }
    }
    labeled(points, classes)
}

/// Uniform disks of the given radius, one class per center.
pub fn disk_blobs(per_blob: usize, centers: &[[f64; 2]], radius: f64, seed: u64) -> Result<Dataset> {
    let mut r = rng(seed);
    let mut points = Vec::with_capacity(per_blob * centers.len());
    let mut classes = Vec::with_capacity(per_blob * centers.len());
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_blob {
            let rho = radius * r.random_range(0.0f64..1.0).sqrt();
            let phi = r.random_range(0.0..std::f64::consts::TAU);
            points.push([center[0] + rho * phi.cos(), center[1] + rho * phi.sin()]);
            classes.push(c as u32);
        }
    }
    labeled(points, classes)
}

/// Two blobs 100 apart.
pub fn two_blobs(per_blob: usize, seed: u64) -> Result<Dataset> {
    gaussian_blobs(per_blob, &[[0.0, 0.0], [100.0, 0.0]], seed)
}

/// Two Gaussian blobs plus one class-1 point at the center of blob 0.
/// Returns the dataset and the planted id (the last one).
pub fn planted_outlier(per_blob: usize, seed: u64) -> Result<(Dataset, usize)> {
    with_point(two_blobs(per_blob, seed)?, [0.0, 0.0], 1)
}

/// Two unit-radius disk blobs 100 apart plus one class-0 point
/// `distance` away from the center of blob 0, on the side facing away
/// from blob 1. Returns the dataset and the displaced id (the last one).
pub fn displaced_point(per_blob: usize, distance: f64, seed: u64) -> Result<(Dataset, usize)> {
    let base = disk_blobs(per_blob, &[[0.0, 0.0], [100.0, 0.0]], 1.0, seed)?;
    with_point(base, [-distance, 0.0], 0)
}

fn with_point(base: Dataset, at: [f64; 2], class: u32) -> Result<(Dataset, usize)> {
    let mut points: Vec<[f64; 2]> = (0..base.len())
        .map(|i| [base.input(i)[0], base.input(i)[1]])
        .collect();
    let mut classes = base.labels().expect("labeled").codes().to_vec();
    let id = points.len();
    points.push(at);
    classes.push(class);
    Ok((labeled(points, classes)?, id))
}

/// `x ~ U(0, 4)`; `y = sin(x - 1)` for `x < 2`, pure noise `U(-1, 1)` above.
pub fn noisy_sine(n: usize, seed: u64) -> Result<Dataset> {
    let mut r = rng(seed);
    let x: Vec<f64> = (0..n).map(|_| r.random_range(0.0..4.0)).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|&x| {
            if x < 2.0 {
                (x - 1.0).sin()
            } else {
                r.random_range(-1.0..1.0)
            }
        })
        .collect();
    Dataset::from_parts(
        Array2::from_shape_vec((n, 1), x).expect("shape"),
        Array2::from_shape_vec((n, 1), y).expect("shape"),
    )
}

/// Independent standard normals in and out, one dimension each.
pub fn independent_normals(n: usize, seed: u64) -> Result<Dataset> {
    let mut r = rng(seed);
    let x = Array2::from_shape_fn((n, 1), |_| normal(&mut r));
    let y = Array2::from_shape_fn((n, 1), |_| normal(&mut r));
    Dataset::from_parts(x, y)
}

/// `y = a·x + b` with `x ~ U(-10, 10)`.
pub fn affine(n: usize, a: f64, b: f64, seed: u64) -> Result<Dataset> {
    let mut r = rng(seed);
    let x = Array2::from_shape_fn((n, 1), |_| r.random_range(-10.0..10.0));
    let y = x.mapv(|v| a * v + b);
    Dataset::from_parts(x, y)
}

/// Uniform random inputs and outputs of the given widths.
pub fn uniform(n: usize, input_dim: usize, output_dim: usize, seed: u64) -> Result<Dataset> {
    let mut r = rng(seed);
    let x = Array2::from_shape_fn((n, input_dim), |_| r.random_range(-1.0..1.0));
    let y = Array2::from_shape_fn((n, output_dim), |_| r.random_range(-1.0..1.0));
    Dataset::from_parts(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_labels() {
        let (ds, planted) = planted_outlier(50, 1).unwrap();
        assert_eq!((ds.len(), planted), (101, 100));
        assert_eq!(ds.labels().unwrap().code(planted), 1);
        assert_eq!(ds.input(planted), &[0.0, 0.0]);
        let (ds, p) = displaced_point(50, 2.7, 1).unwrap();
        assert_eq!(ds.input(p), &[-2.7, 0.0]);
        assert_eq!(ds.labels().unwrap().code(p), 0);
        assert_eq!(two_blobs(60, 3).unwrap(), two_blobs(60, 3).unwrap());
        let s = noisy_sine(300, 0).unwrap();
        assert!((0..300).all(|i| s.input(i)[0] >= 2.0 || s.output(i)[0] == (s.input(i)[0] - 1.0).sin()));
    }
}
