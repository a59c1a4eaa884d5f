//! Brute-force Mahalanobis K-NN classification.
//!
//! Distance ties are broken by the smaller training index; voting ties (only
//! possible with more than two classes) by the smallest class id.

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{ArmlError, Result};
use crate::metric::MetricFactor;

#[derive(Debug, Clone)]
pub struct KnnModel {
    train: Dataset,
    metric: MetricFactor,
    k: usize,
    /// Training features mapped through `G` (`N x r`).
    projected: Array2<f64>,
    /// Rows `(M x_i)ᵀ` (`N x D`).
    mapped: Array2<f64>,
}

impl KnnModel {
    pub fn new(train: Dataset, metric: MetricFactor, k: usize) -> Result<Self> {
        if k == 0 || k.is_multiple_of(2) {
            return Err(ArmlError::InvalidArgument(format!(
                "K must be odd and positive, got {k}"
            )));
        }
        if k > train.len() {
            return Err(ArmlError::NotEnoughInstances {
                needed: k,
                available: train.len(),
                context: "K nearest neighbors",
            });
        }
        if metric.dim() != train.dim() {
            return Err(ArmlError::DimensionMismatch {
                expected: train.dim(),
                found: metric.dim(),
            });
        }
        let projected = train.features().dot(&metric.factor().t());
        let mapped = train.features().dot(metric.matrix());
        Ok(Self {
            train,
            metric,
            k,
            projected,
            mapped,
        })
    }

    pub fn train(&self) -> &Dataset {
        &self.train
    }

    pub fn metric(&self) -> &MetricFactor {
        &self.metric
    }

    pub(crate) fn mapped(&self) -> &Array2<f64> {
        &self.mapped
    }

    /// Same training set and metric with a different `K`.
    pub fn with_k(&self, k: usize) -> Result<Self> {
        if k == 0 || k.is_multiple_of(2) || k > self.train.len() {
            return Err(ArmlError::InvalidArgument(format!("invalid K = {k}")));
        }
        Ok(Self { k, ..self.clone() })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Order-statistic index `(K + 1) / 2` used by the robustness bounds.
    pub fn half_k(&self) -> usize {
        self.k.div_ceil(2)
    }

    pub(crate) fn check_dim(&self, x: ArrayView1<'_, f64>) -> Result<()> {
        if x.len() != self.train.dim() {
            return Err(ArmlError::DimensionMismatch {
                expected: self.train.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// `d_M(x, x_i)` for every training instance.
    pub fn distances(&self, x: ArrayView1<'_, f64>) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let z = self.metric.project(x);
        Ok(self
            .projected
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(z.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .collect())
    }

    /// Indices of the `K` nearest training instances (ascending distance,
    /// then ascending index), skipping `exclude`.
    pub fn neighbors(&self, x: ArrayView1<'_, f64>, exclude: Option<usize>) -> Result<Vec<usize>> {
        let dist = self.distances(x)?;
        let mut idx: Vec<usize> = (0..dist.len()).filter(|&i| Some(i) != exclude).collect();
        if idx.len() < self.k {
            return Err(ArmlError::NotEnoughInstances {
                needed: self.k,
                available: idx.len(),
                context: "K nearest neighbors",
            });
        }
        let cmp = |a: &usize, b: &usize| dist[*a].total_cmp(&dist[*b]).then(a.cmp(b));
        if self.k < idx.len() {
            idx.select_nth_unstable_by(self.k - 1, cmp);
            idx.truncate(self.k);
        }
        idx.sort_by(cmp);
        Ok(idx)
    }

    pub fn predict(&self, x: ArrayView1<'_, f64>, exclude: Option<usize>) -> Result<usize> {
        let nn = self.neighbors(x, exclude)?;
        let mut votes = vec![0usize; self.train.num_classes()];
        for &i in &nn {
            votes[self.train.label(i)] += 1;
        }
        // max_by_key keeps the last maximum; scan explicitly for the first
        let mut best = 0;
        for (c, &v) in votes.iter().enumerate() {
            if v > votes[best] {
                best = c;
            }
        }
        Ok(best)
    }

    /// Predictions for every row of `test`, optionally leaving each row out
    /// of its own neighbor search (requires `test` to be the training set).
    pub fn predict_all(&self, test: &Dataset, leave_one_out: bool) -> Result<Vec<usize>> {
        if leave_one_out && test.len() != self.train.len() {
            return Err(ArmlError::InvalidArgument(
                "leave-one-out evaluation requires the training set as test set".into(),
            ));
        }
        (0..test.len())
            .into_par_iter()
            .map(|i| self.predict(test.row(i), leave_one_out.then_some(i)))
            .collect()
    }
}

/// Fraction of misclassified test instances.
pub fn clean_error(model: &KnnModel, test: &Dataset, leave_one_out: bool) -> Result<f64> {
    if test.is_empty() {
        return Err(ArmlError::EmptyDataset);
    }
    let pred = model.predict_all(test, leave_one_out)?;
    let wrong = pred.iter().zip(test.labels()).filter(|(p, y)| p != y).count();
    Ok(wrong as f64 / test.len() as f64)
}
