//! Small generated datasets for tests, examples and benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::Dataset;

/// Seven labeled points in the plane: four of class 0 on a vertical line,
/// three of class 1 clustered to the right.
pub fn toy_seven() -> Dataset {
    let rows = [
        [0.0, 0.0],
        [0.0, 1.0],
        [0.0, 2.0],
        [0.0, 3.0],
        [2.0, 0.5],
        [2.5, 1.5],
        [2.0, 2.5],
    ];
    let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
    Dataset::from_rows(&rows, &[0, 0, 0, 0, 1, 1, 1]).expect("static data")
}

/// `per_class` points per class, class `c` centered at `separation * e_{c mod dim}`
/// with unit isotropic noise.
pub fn gaussian_classes(per_class: usize, classes: usize, dim: usize, separation: f64, seed: u64) -> Dataset {
    assert!(dim > 0 && classes > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rows = Vec::with_capacity(per_class * classes);
    let mut labels = Vec::with_capacity(per_class * classes);
    for c in 0..classes {
        for _ in 0..per_class {
            let mut row: Vec<f64> = (0..dim).map(|_| noise.sample(&mut rng)).collect();
            row[c % dim] += separation * (1 + c / dim) as f64;
            rows.push(row);
            labels.push(c);
        }
    }
    Dataset::from_rows(&rows, &labels).expect("generated data")
}
