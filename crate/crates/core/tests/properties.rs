mod common;

use common::run;
use ndarray::Array2;
use proptest::prelude::*;
use qi2_core::analysis::global_qi2r;
use qi2_core::container::{load_results, save_results};
use qi2_core::dataset::Dataset;
use qi2_core::metrics::Metrics;
use qi2_core::pipeline::{compute, ComputeOptions};
use qi2_core::qi2::DEFAULT_EPSILON;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(n: usize, seed: u64) -> Dataset {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, 2), |_| r.random_range(-1.0..1.0));
    let y = Array2::from_shape_fn((n, 1), |_| r.random_range(-1.0..1.0));
    Dataset::from_parts(x, y).unwrap()
}

fn rel_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12f64.max(1e-9 * a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn relabeling_points_permutes_rows(seed in 0u64..10_000) {
        let ds = random(60, seed);
        let mut perm: Vec<usize> = (0..60).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xFF));
        let x = Array2::from_shape_fn((60, 2), |(i, j)| ds.inputs()[(perm[i], j)]);
        let y = Array2::from_shape_fn((60, 1), |(i, j)| ds.outputs()[(perm[i], j)]);
        let shuffled = Dataset::from_parts(x, y).unwrap();
        let (a, b) = (run(&ds, Metrics::default(), 20), run(&shuffled, Metrics::default(), 20));
        for i in 0..60 {
            for k in 1..=20 {
                prop_assert!(rel_close(b.matrix.value(i, k), a.matrix.value(perm[i], k)));
            }
        }
        // which anchor keeps a shared set depends on order, how many do not
        for k in 1..=20 {
            let valid = |m: &qi2_core::qi2::Mlqi2Matrix| (0..60).filter(|&i| m.is_valid(i, k)).count();
            prop_assert_eq!(valid(&a.matrix), valid(&b.matrix));
        }
    }

    #[test]
    fn global_score_is_symmetric_in_the_two_spaces(seed in 0u64..10_000) {
        let ds = random(80, seed);
        let y2 = Array2::from_shape_fn((80, 2), |(i, j)| ds.inputs()[(i, j)]);
        let x1 = ds.outputs().clone();
        let swapped = Dataset::from_parts(x1, y2).unwrap();
        let a = global_qi2r(&ds, Metrics::default(), DEFAULT_EPSILON).unwrap();
        let b = global_qi2r(&swapped, Metrics::default(), DEFAULT_EPSILON).unwrap();
        prop_assert!(rel_close(a, b), "{} vs {}", a, b);
    }

    #[test]
    fn local_scores_are_finite_and_nonnegative(seed in 0u64..10_000, n in 3usize..40) {
        let ds = random(n, seed);
        let r = run(&ds, Metrics::default(), n - 1);
        prop_assert!(r.matrix.values().iter().all(|v| v.is_finite() && *v >= 0.0));
        // the whole dataset as a neighborhood reproduces the global score
        let g = global_qi2r(&ds, Metrics::default(), DEFAULT_EPSILON).unwrap();
        prop_assert!(rel_close(r.matrix.value(0, n - 1), g));
    }
}

#[test]
fn saved_container_equals_the_computed_one() {
    let ds = random(120, 3);
    let c = compute(&ds, &ComputeOptions { k_max: 30, ..ComputeOptions::default() }, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.qi2");
    save_results(&c.results, &path).unwrap();
    let back = load_results(&path, Some(&ds.fingerprint())).unwrap();
    assert_eq!(back, c.results);
    save_results(&back, dir.path().join("again.qi2")).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(dir.path().join("again.qi2")).unwrap());
}
