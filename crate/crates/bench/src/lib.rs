//! Shared fixtures for the kernel benchmarks.

use arml::synthetic::gaussian_classes;
use arml::{Dataset, KnnModel, MetricFactor};

/// Two overlapping Gaussian classes, `n` training and 100 test points.
pub fn fixture(n: usize, dim: usize, k: usize) -> (KnnModel, Dataset) {
    let train = gaussian_classes(n / 2, 2, dim, 1.5, 1);
    let test = gaussian_classes(50, 2, dim, 1.5, 2);
    let model = KnnModel::new(train, MetricFactor::identity(dim), k).expect("valid fixture");
    (model, test)
}
