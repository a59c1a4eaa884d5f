//! Robustness verification for Mahalanobis K-NN.
//!
//! The building block is the triplet bound
//!
//! ```text
//! ε̃(x⁺, x⁻, x; M) = (d_M(x, x⁻) − d_M(x, x⁺)) / (2 ‖M (x⁺ − x⁻)‖)
//! ```
//!
//! whose positive part is the smallest perturbation making `x` at least as
//! close to `x⁻` as to `x⁺`. For K-NN with `k = (K + 1) / 2`, the minimal
//! adversarial perturbation is at least the k-th minimum over differently
//! labeled `j` of the k-th maximum over same-class `i` of `ε̃(x_i, x_j, x)`.

use ndarray::ArrayView1;
use rayon::prelude::*;

use crate::curve::{validate_radii, CurveKind, RobustErrorCurve};
use crate::dataset::Dataset;
use crate::error::{ArmlError, Result};
use crate::exact::{exact_minimal_perturbation, Screening};
use crate::knn::KnnModel;
use crate::metric::{mahalanobis_distance, MetricFactor};

/// Denominators below this make the triplet degenerate (`x⁺ ≈ x⁻`).
pub const DENOMINATOR_GUARD: f64 = 1e-12;

/// `ε̃` from precomputed distances and the rows `M x⁺`, `M x⁻`.
pub(crate) fn triplet_from_parts(
    dist_plus: f64,
    dist_minus: f64,
    mapped_plus: ArrayView1<'_, f64>,
    mapped_minus: ArrayView1<'_, f64>,
) -> f64 {
    let sq: f64 = mapped_plus
        .iter()
        .zip(mapped_minus.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let den = sq.sqrt();
    if den < DENOMINATOR_GUARD {
        return 0.0;
    }
    (dist_minus - dist_plus) / (2.0 * den)
}

/// Signed triplet bound `ε̃(x⁺, x⁻, x; M)`; zero when `x⁺ = x⁻`.
pub fn triplet_epsilon(
    x_plus: ArrayView1<'_, f64>,
    x_minus: ArrayView1<'_, f64>,
    x: ArrayView1<'_, f64>,
    metric: &MetricFactor,
) -> Result<f64> {
    let d_plus = mahalanobis_distance(metric, x, x_plus)?;
    let d_minus = mahalanobis_distance(metric, x, x_minus)?;
    let mp = metric.apply(x_plus);
    let mm = metric.apply(x_minus);
    Ok(triplet_from_parts(d_plus, d_minus, mp.view(), mm.view()))
}

/// k-th largest of `values` (1-based), reordering the slice.
fn kth_largest(values: &mut [f64], k: usize) -> f64 {
    let (_, v, _) = values.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    *v
}

fn kth_smallest(values: &mut [f64], k: usize) -> f64 {
    let (_, v, _) = values.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
    *v
}

/// Signed lower bound on the minimal adversarial perturbation of K-NN at
/// `(x, y)`, evaluating all same-class × other-class triplets.
///
/// With fewer than `k` same-class instances the k-th maximum ranges over an
/// empty set (a neighbor set with at most `k − 1` same-class members needs no
/// perturbation at all), so the bound is 0.
pub fn knn_lower_bound(model: &KnnModel, x: ArrayView1<'_, f64>, y: usize, exclude: Option<usize>) -> Result<f64> {
    let k = model.half_k();
    let labels = model.train().labels();
    let usable = |i: &usize| Some(*i) != exclude;
    let same: Vec<usize> = (0..labels.len()).filter(|i| labels[*i] == y).filter(usable).collect();
    let diff: Vec<usize> = (0..labels.len()).filter(|i| labels[*i] != y).filter(usable).collect();
    if diff.len() < k {
        return Err(ArmlError::NotEnoughInstances {
            needed: k,
            available: diff.len(),
            context: "differently labeled training instances",
        });
    }
    if same.is_empty() {
        return Err(ArmlError::NotEnoughInstances {
            needed: 1,
            available: 0,
            context: "same-class training instances",
        });
    }
    if same.len() < k {
        return Ok(0.0);
    }
    let dist = model.distances(x)?;
    let mapped = model.mapped();

    let mut per_j = Vec::with_capacity(diff.len());
    let mut buf = vec![0.0; same.len()];
    for &j in &diff {
        let mj = mapped.row(j);
        for (slot, &i) in buf.iter_mut().zip(&same) {
            *slot = triplet_from_parts(dist[i], dist[j], mapped.row(i), mj);
        }
        per_j.push(kth_largest(&mut buf, k));
    }
    Ok(kth_smallest(&mut per_j, k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertifyMode {
    /// Triplet-based lower bound, any odd K.
    Theorem1,
    /// Exact minimal perturbation, K = 1 only.
    Exact1nn,
}

/// Per-instance certified radii.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificationResult {
    /// Nonnegative lower bound on the minimal adversarial perturbation.
    pub lower_bound: Vec<f64>,
    /// True for values produced by a converged exact 1-NN solve.
    pub is_exact: Vec<bool>,
}

impl CertificationResult {
    pub fn len(&self) -> usize {
        self.lower_bound.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower_bound.is_empty()
    }

    pub fn curve(&self, radii: &[f64]) -> Result<RobustErrorCurve> {
        RobustErrorCurve::from_norms(&self.lower_bound, radii, CurveKind::Certified)
    }
}

fn certify_one(
    model: &KnnModel,
    x: ArrayView1<'_, f64>,
    y: usize,
    exclude: Option<usize>,
    mode: CertifyMode,
) -> Result<(f64, bool)> {
    if model.predict(x, exclude)? != y {
        return Ok((0.0, mode == CertifyMode::Exact1nn));
    }
    match mode {
        CertifyMode::Theorem1 => Ok((knn_lower_bound(model, x, y, exclude)?.max(0.0), false)),
        CertifyMode::Exact1nn => {
            let p = exact_minimal_perturbation(model, x, y, exclude, Screening::Enabled)?;
            if !p.converged {
                log::warn!("exact 1-NN solve did not converge; value flagged as non-exact");
            }
            Ok((p.eps, p.converged))
        }
    }
}

/// Certifies every instance of `test` (in parallel). With `leave_one_out`,
/// `test` must be the training set and each instance is excluded from its
/// own neighbor search.
pub fn certify_instances(
    model: &KnnModel,
    test: &Dataset,
    mode: CertifyMode,
    leave_one_out: bool,
) -> Result<CertificationResult> {
    if test.is_empty() {
        return Err(ArmlError::EmptyDataset);
    }
    if mode == CertifyMode::Exact1nn && model.k() != 1 {
        return Err(ArmlError::InvalidArgument(format!(
            "exact mode requires K = 1, got {}",
            model.k()
        )));
    }
    if leave_one_out && test.len() != model.train().len() {
        return Err(ArmlError::InvalidArgument(
            "leave-one-out certification requires the training set as test set".into(),
        ));
    }
    let results: Vec<(f64, bool)> = (0..test.len())
        .into_par_iter()
        .map(|i| certify_one(model, test.row(i), test.label(i), leave_one_out.then_some(i), mode))
        .collect::<Result<_>>()?;
    let (lower_bound, is_exact) = results.into_iter().unzip();
    Ok(CertificationResult { lower_bound, is_exact })
}

/// Certified robust error at each radius.
pub fn certified_curve(model: &KnnModel, test: &Dataset, radii: &[f64], mode: CertifyMode) -> Result<RobustErrorCurve> {
    validate_radii(radii)?;
    certify_instances(model, test, mode, false)?.curve(radii)
}
