//! Adversarially robust metric learning.
//!
//! Each epoch draws, for every training instance `x_i`, one same-class peer
//! `x⁺` and one other-class instance `x⁻` from their `h` nearest neighbors
//! under the current metric, and takes one Adam step on `G` along the
//! full-batch gradient of
//!
//! ```text
//! (1/N) Σ_i ℓ(ε̃(x⁺_i, x⁻_i, x_i; GᵀG))
//! ```
//!
//! Neighbor selection is treated as constant when differentiating.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::certify::DENOMINATOR_GUARD;
use crate::dataset::Dataset;
use crate::error::{ArmlError, Result};
use crate::metric::MetricFactor;

/// Instances per gradient chunk; chunks are reduced in index order so the
/// result does not depend on the thread count.
const CHUNK: usize = 128;

/// Monotonically non-increasing surrogate for the 0-1 robust error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossFn {
    Negative,
    Hinge,
    Exponential,
    Logistic,
}

impl LossFn {
    pub fn value(self, eps: f64) -> f64 {
        match self {
            LossFn::Negative => -eps,
            LossFn::Hinge => (1.0 - eps).max(0.0),
            LossFn::Exponential => (-eps).exp(),
            // log(1 + e^{-ε}) without overflow for large negative ε
            LossFn::Logistic => (-eps).max(0.0) + (-eps.abs()).exp().ln_1p(),
        }
    }

    /// Derivative with respect to `eps` (the hinge uses 0 at the kink).
    pub fn derivative(self, eps: f64) -> f64 {
        match self {
            LossFn::Negative => -1.0,
            LossFn::Hinge => {
                if eps < 1.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            LossFn::Exponential => -(-eps).exp(),
            LossFn::Logistic => -1.0 / (1.0 + eps.exp()),
        }
    }
}

impl FromStr for LossFn {
    type Err = ArmlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "negative" => Ok(LossFn::Negative),
            "hinge" => Ok(LossFn::Hinge),
            "exponential" | "exp" => Ok(LossFn::Exponential),
            "logistic" => Ok(LossFn::Logistic),
            other => Err(ArmlError::InvalidArgument(format!("unknown loss `{other}`"))),
        }
    }
}

impl fmt::Display for LossFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossFn::Negative => "negative",
            LossFn::Hinge => "hinge",
            LossFn::Exponential => "exponential",
            LossFn::Logistic => "logistic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// One random near pair per instance per epoch.
    Sampled,
    /// The exact k-th min / k-th max triplet per instance (slow: `O(N²)` per
    /// instance).
    ExactKth,
}

impl FromStr for Objective {
    type Err = ArmlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampled" => Ok(Objective::Sampled),
            "exact-kth" | "exact_kth" => Ok(Objective::ExactKth),
            other => Err(ArmlError::InvalidArgument(format!("unknown objective `{other}`"))),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Sampled => "sampled",
            Objective::ExactKth => "exact-kth",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossFn,
    pub epochs: usize,
    pub neighborhood: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub objective: Objective,
    /// K for the exact k-th objective.
    pub k: usize,
    /// Rows of `G`; `None` means `D`.
    pub factor_rows: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossFn::Negative,
            epochs: 1000,
            neighborhood: 10,
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            objective: Objective::Sampled,
            k: 1,
            factor_rows: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |m: String| Err(ArmlError::InvalidArgument(m));
        if self.neighborhood == 0 {
            return bad("neighborhood must be at least 1".into());
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return bad("adam epsilon must be positive".into());
        }
        if self.k == 0 || self.k.is_multiple_of(2) {
            return bad(format!("K must be odd and positive, got {}", self.k));
        }
        if let Some(r) = self.factor_rows {
            if r == 0 || r > dim {
                return bad(format!("factor rows must be in 1..={dim}, got {r}"));
            }
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Array2<f64>,
    v: Array2<f64>,
    t: i32,
}

impl Adam {
    pub fn new(shape: (usize, usize), lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: Array2::zeros(shape),
            v: Array2::zeros(shape),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut Array2<f64>, grad: &Array2<f64>) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        ndarray::Zip::from(params)
            .and(&mut self.m)
            .and(&mut self.v)
            .and(grad)
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            });
    }
}

/// Per-instance candidate lists for `randnear⁺` / `randnear⁻`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborLists {
    pub same: Vec<Vec<usize>>,
    pub other: Vec<Vec<usize>>,
}

fn nearest_of(dist: &[f64], candidates: impl Iterator<Item = usize>, h: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = candidates.collect();
    let cmp = |a: &usize, b: &usize| dist[*a].total_cmp(&dist[*b]).then(a.cmp(b));
    if h < idx.len() {
        idx.select_nth_unstable_by(h - 1, cmp);
        idx.truncate(h);
    }
    idx.sort_by(cmp);
    idx
}

fn peers_from_distances(labels: &[usize], dist: &[f64], i: usize, h: usize) -> (Vec<usize>, Vec<usize>) {
    let y = labels[i];
    let same = nearest_of(dist, (0..labels.len()).filter(|&j| j != i && labels[j] == y), h);
    let other = nearest_of(dist, (0..labels.len()).filter(|&j| labels[j] != y), h);
    (same, other)
}

/// Anchors per block when forming distances from a Gram product.
const GRAM_BLOCK: usize = 256;

/// Squared distances from anchors `start..end` to every row of `projected`,
/// as `‖z_i‖² + ‖z_j‖² − 2 z_i·z_j` (clamped at zero).
fn block_distances(projected: &Array2<f64>, norms: &[f64], start: usize, end: usize) -> Array2<f64> {
    let block = projected.slice(ndarray::s![start..end, ..]);
    // `dot` may return column-major output; rows must be contiguous below.
    let mut dist = block.dot(&projected.t()).as_standard_layout().into_owned();
    for (a, mut row) in dist.rows_mut().into_iter().enumerate() {
        let ni = norms[start + a];
        for (v, &nj) in row.iter_mut().zip(norms) {
            *v = (ni + nj - 2.0 * *v).max(0.0);
        }
    }
    dist
}

/// The `h` nearest same-class peers of `x_i` (excluding `i`) and the `h`
/// nearest other-class instances, clipped to what is available.
pub fn nearest_peers(data: &Dataset, metric: &MetricFactor, i: usize, h: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if h == 0 {
        return Err(ArmlError::InvalidArgument("neighborhood must be at least 1".into()));
    }
    if i >= data.len() {
        return Err(ArmlError::InvalidArgument(format!("instance {i} out of range")));
    }
    let projected = data.features().dot(&metric.factor().t());
    let zi = projected.row(i);
    let dist: Vec<f64> = projected
        .rows()
        .into_iter()
        .map(|zj| zj.iter().zip(zi.iter()).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect();
    Ok(peers_from_distances(data.labels(), &dist, i, h))
}

pub fn neighbor_lists(data: &Dataset, metric: &MetricFactor, h: usize) -> Result<NeighborLists> {
    if h == 0 {
        return Err(ArmlError::InvalidArgument("neighborhood must be at least 1".into()));
    }
    if metric.dim() != data.dim() {
        return Err(ArmlError::DimensionMismatch {
            expected: data.dim(),
            found: metric.dim(),
        });
    }
    let projected = data.features().dot(&metric.factor().t());
    let norms: Vec<f64> = projected.rows().into_iter().map(|z| z.dot(&z)).collect();
    let n = data.len();
    let blocks: Vec<Vec<(Vec<usize>, Vec<usize>)>> = (0..n.div_ceil(GRAM_BLOCK))
        .into_par_iter()
        .map(|b| {
            let (start, end) = (b * GRAM_BLOCK, ((b + 1) * GRAM_BLOCK).min(n));
            let dist = block_distances(&projected, &norms, start, end);
            (start..end)
                .map(|i| {
                    let row = dist.row(i - start);
                    peers_from_distances(data.labels(), row.as_slice().expect("contiguous row"), i, h)
                })
                .collect()
        })
        .collect();
    let (same, other) = blocks.into_iter().flatten().unzip();
    Ok(NeighborLists { same, other })
}

/// Draws `(x⁺, x⁻)` uniformly from the precomputed lists of instance `i`;
/// `None` if either list is empty.
pub fn randnear_pair<R: Rng + ?Sized>(lists: &NeighborLists, i: usize, rng: &mut R) -> Option<(usize, usize)> {
    let same = &lists.same[i];
    let other = &lists.other[i];
    if same.is_empty() || other.is_empty() {
        return None;
    }
    let p = same[rng.random_range(0..same.len())];
    let m = other[rng.random_range(0..other.len())];
    Some((p, m))
}

/// Anchor, positive and negative instance indices of one loss term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub plus: usize,
    pub minus: usize,
}

/// Samples one near pair per instance, in index order, from `rng`.
pub fn sample_triplets<R: Rng + ?Sized>(lists: &NeighborLists, rng: &mut R) -> (Vec<Triplet>, usize) {
    let mut triplets = Vec::with_capacity(lists.same.len());
    let mut skipped = 0;
    for i in 0..lists.same.len() {
        match randnear_pair(lists, i, rng) {
            Some((plus, minus)) => triplets.push(Triplet { anchor: i, plus, minus }),
            None => skipped += 1,
        }
    }
    (triplets, skipped)
}

/// For every anchor `t`, the triplet attaining
/// `kthmin_{j: y_j ≠ y_t} kthmax_{i ≠ t: y_i = y_t} ε̃(x_i, x_j, x_t)`.
/// Anchors with fewer than `k` candidates on either side are skipped.
pub fn exact_kth_triplets(data: &Dataset, metric: &MetricFactor, k_neighbors: usize) -> Result<(Vec<Triplet>, usize)> {
    if k_neighbors == 0 || k_neighbors.is_multiple_of(2) {
        return Err(ArmlError::InvalidArgument(format!("K must be odd, got {k_neighbors}")));
    }
    let k = k_neighbors.div_ceil(2);
    let n = data.len();
    let projected = data.features().dot(&metric.factor().t());
    let mapped = data.features().dot(metric.matrix());
    let labels = data.labels();

    let denom: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    let s: f64 = mapped
                        .row(i)
                        .iter()
                        .zip(mapped.row(j).iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    s.sqrt()
                })
                .collect()
        })
        .collect();

    let picks: Vec<Option<Triplet>> = (0..n)
        .into_par_iter()
        .map(|t| {
            let y = labels[t];
            let zt = projected.row(t);
            let dist: Vec<f64> = projected
                .rows()
                .into_iter()
                .map(|z| z.iter().zip(zt.iter()).map(|(a, b)| (a - b) * (a - b)).sum())
                .collect();
            let same: Vec<usize> = (0..n).filter(|&i| i != t && labels[i] == y).collect();
            let other: Vec<usize> = (0..n).filter(|&j| labels[j] != y).collect();
            if same.len() < k || other.len() < k {
                return None;
            }
            let eps = |i: usize, j: usize| {
                let d = denom[i][j];
                if d < DENOMINATOR_GUARD {
                    0.0
                } else {
                    (dist[j] - dist[i]) / (2.0 * d)
                }
            };
            // (value, i) ordered descending by value, ties by index
            let mut per_j: Vec<(f64, usize, usize)> = other
                .iter()
                .map(|&j| {
                    let mut vals: Vec<(f64, usize)> = same.iter().map(|&i| (eps(i, j), i)).collect();
                    let (_, &mut (v, i), _) =
                        vals.select_nth_unstable_by(k - 1, |a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                    (v, i, j)
                })
                .collect();
            let (_, &mut (_, i, j), _) =
                per_j.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
            Some(Triplet {
                anchor: t,
                plus: i,
                minus: j,
            })
        })
        .collect();
    let skipped = picks.iter().filter(|p| p.is_none()).count();
    Ok((picks.into_iter().flatten().collect(), skipped))
}

/// Outer products `a bᵀ` whose sum is a gradient with respect to `G`.
type RankOneTerms = [(Array1<f64>, Array1<f64>); 4];

/// Signed triplet value and its gradient with respect to `G`, or `None` for a
/// degenerate denominator.
fn triplet_value_and_grad(
    g: &Array2<f64>,
    x: ArrayView1<'_, f64>,
    plus: ArrayView1<'_, f64>,
    minus: ArrayView1<'_, f64>,
) -> Option<(f64, RankOneTerms)> {
    let v_plus = &x - &plus;
    let v_minus = &x - &minus;
    let u = &plus - &minus;
    let a_plus = g.dot(&v_plus);
    let a_minus = g.dot(&v_minus);
    let num = a_minus.dot(&a_minus) - a_plus.dot(&a_plus);
    let w = g.dot(&u);
    let mu = g.t().dot(&w);
    let s = mu.dot(&mu);
    let root = s.sqrt();
    if root < DENOMINATOR_GUARD {
        return None;
    }
    let den = 2.0 * root;
    let eps = num / den;
    let gmu = g.dot(&mu);
    // ∂num/∂G = 2(a⁻v⁻ᵀ − a⁺v⁺ᵀ);  ∂√s/∂G = (w μᵀ + Gμ uᵀ) / √s
    let c_num = 2.0 / den;
    let c_den = -eps * 2.0 / (den * root);
    Some((
        eps,
        [
            (a_minus * c_num, v_minus),
            (a_plus * -c_num, v_plus),
            (w * c_den, mu),
            (gmu * c_den, u),
        ],
    ))
}

/// Mean loss over all `n` instances and its gradient with respect to `G`,
/// for the given triplets (instances without a triplet contribute zero).
pub fn objective_and_gradient(
    data: &Dataset,
    g: &Array2<f64>,
    loss: LossFn,
    triplets: &[Triplet],
) -> Result<(f64, Array2<f64>)> {
    if g.ncols() != data.dim() {
        return Err(ArmlError::DimensionMismatch {
            expected: data.dim(),
            found: g.ncols(),
        });
    }
    let n = data.len() as f64;
    let x = data.features();
    let partial: Vec<Result<(f64, Array2<f64>)>> = triplets
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut total = 0.0;
            let mut grad = Array2::zeros(g.raw_dim());
            for t in chunk {
                let Some((eps, terms)) = triplet_value_and_grad(g, x.row(t.anchor), x.row(t.plus), x.row(t.minus))
                else {
                    continue;
                };
                let value = loss.value(eps);
                let slope = loss.derivative(eps) / n;
                if !value.is_finite() || !slope.is_finite() {
                    return Err(ArmlError::NonFinite {
                        epoch: 0,
                        instance: t.anchor,
                    });
                }
                total += value;
                for (left, right) in &terms {
                    let outer = left
                        .view()
                        .insert_axis(ndarray::Axis(1))
                        .dot(&right.view().insert_axis(ndarray::Axis(0)));
                    grad.scaled_add(slope, &outer);
                }
            }
            Ok((total, grad))
        })
        .collect();
    let mut total = 0.0;
    let mut grad = Array2::zeros(g.raw_dim());
    for part in partial {
        let (l, gr) = part?;
        total += l;
        grad += &gr;
    }
    Ok((total / n, grad))
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub metric: MetricFactor,
    /// Mean loss at each epoch, before that epoch's update.
    pub losses: Vec<f64>,
    /// Total instance-epochs skipped for lack of peers.
    pub skipped: usize,
}

/// Trains a metric, calling `on_epoch(epoch, loss)` (1-based) after each
/// epoch's loss is evaluated.
pub fn train_with<F: FnMut(usize, f64)>(data: &Dataset, cfg: &TrainConfig, mut on_epoch: F) -> Result<TrainReport> {
    cfg.validate(data.dim())?;
    let d = data.dim();
    let rows = cfg.factor_rows.unwrap_or(d);
    let mut g = MetricFactor::truncated_identity(rows, d).factor().clone();
    let mut adam = Adam::new(g.dim(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut skipped_total = 0;

    for epoch in 0..cfg.epochs {
        let metric = MetricFactor::from_factor(g.clone()).map_err(|_| ArmlError::NonFinite { epoch, instance: 0 })?;
        let (triplets, skipped) = match cfg.objective {
            Objective::Sampled => {
                let lists = neighbor_lists(data, &metric, cfg.neighborhood)?;
                sample_triplets(&lists, &mut rng)
            }
            Objective::ExactKth => exact_kth_triplets(data, &metric, cfg.k)?,
        };
        skipped_total += skipped;
        let (loss, grad) = objective_and_gradient(data, &g, cfg.loss, &triplets).map_err(|e| match e {
            ArmlError::NonFinite { instance, .. } => ArmlError::NonFinite { epoch, instance },
            other => other,
        })?;
        if !loss.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return Err(ArmlError::NonFinite { epoch, instance: 0 });
        }
        losses.push(loss);
        on_epoch(epoch + 1, loss);
        adam.step(&mut g, &grad);
    }
    if skipped_total > 0 {
        log::info!("{skipped_total} instance-epochs skipped for lack of same-class peers");
    }
    Ok(TrainReport {
        metric: MetricFactor::from_factor(g)?,
        losses,
        skipped: skipped_total,
    })
}

pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    train_with(data, cfg, |_, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn loss_values() {
        assert_eq!(LossFn::Negative.value(2.0), -2.0);
        assert_eq!(LossFn::Hinge.value(0.5), 0.5);
        assert_eq!(LossFn::Hinge.value(3.0), 0.0);
        assert!((LossFn::Logistic.value(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(LossFn::Exponential.value(0.0), 1.0);
        let big = LossFn::Logistic.value(-800.0);
        assert!((big - 800.0).abs() < 1e-9);
        assert!(LossFn::Logistic.value(800.0) >= 0.0);
    }

    #[test]
    fn losses_are_non_increasing() {
        for loss in [LossFn::Negative, LossFn::Hinge, LossFn::Exponential, LossFn::Logistic] {
            let mut prev = f64::INFINITY;
            for t in -400..=400 {
                let eps = t as f64 * 0.05;
                let v = loss.value(eps);
                assert!(v <= prev, "{loss} increases at {eps}");
                assert!(loss.derivative(eps) <= 0.0);
                prev = v;
            }
        }
    }

    #[test]
    fn adam_first_step() {
        let mut p = array![[0.0]];
        let mut adam = Adam::new((1, 1), 0.001, 0.9, 0.999, 1e-8);
        adam.step(&mut p, &array![[1.0]]);
        assert!((p[[0, 0]] + 0.001).abs() < 1e-10);
        let mut q = array![[0.0]];
        let mut adam = Adam::new((1, 1), 0.001, 0.9, 0.999, 1e-8);
        adam.step(&mut q, &array![[-250.0]]);
        assert!((q[[0, 0]] - 0.001).abs() < 1e-10);
    }

    #[test]
    fn single_triplet_loss() {
        let data = Dataset::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![3.0, 0.0]], &[0, 0, 1]).unwrap();
        let t = [Triplet {
            anchor: 0,
            plus: 1,
            minus: 2,
        }];
        let (loss, _) = objective_and_gradient(&data, &Array2::eye(2), LossFn::Negative, &t).unwrap();
        // ε̃ = 2 averaged over N = 3
        assert!((loss + 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_triplet_contributes_nothing() {
        let data = Dataset::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![1.0, 1.0]], &[0, 0, 1]).unwrap();
        let t = [Triplet {
            anchor: 0,
            plus: 1,
            minus: 2,
        }];
        let (loss, grad) = objective_and_gradient(&data, &Array2::eye(2), LossFn::Exponential, &t).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&v| v == 0.0));
    }

    fn toy() -> Dataset {
        Dataset::from_rows(
            &[
                vec![0.0, 0.0],
                vec![0.0, 1.0],
                vec![0.0, 2.0],
                vec![0.0, 3.0],
                vec![5.0, 0.0],
                vec![6.0, 0.0],
                vec![5.0, 1.0],
            ],
            &[0, 0, 0, 0, 1, 1, 1],
        )
        .unwrap()
    }

    #[test]
    fn neighborhood_one_is_deterministic() {
        let data = toy();
        let lists = neighbor_lists(&data, &MetricFactor::identity(2), 1).unwrap();
        assert_eq!(lists.same[0], vec![1]);
        assert_eq!(lists.other[0], vec![4]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            assert_eq!(randnear_pair(&lists, 0, &mut rng), Some((1, 4)));
        }
        let (s, o) = nearest_peers(&data, &MetricFactor::identity(2), 0, 1).unwrap();
        assert_eq!((s, o), (vec![1], vec![4]));
    }

    #[test]
    fn positives_never_include_anchor() {
        let data = toy();
        let lists = neighbor_lists(&data, &MetricFactor::identity(2), 100).unwrap();
        for i in 0..data.len() {
            assert!(!lists.same[i].contains(&i));
            assert_eq!(lists.same[i].len(), if i < 4 { 3 } else { 2 });
            assert!(lists.other[i].iter().all(|&j| data.label(j) != data.label(i)));
        }
    }

    #[test]
    fn sampling_is_uniform_over_clipped_neighborhood() {
        let data = toy();
        let lists = neighbor_lists(&data, &MetricFactor::identity(2), 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 10_000;
        let mut plus_counts = [0usize; 7];
        let mut minus_counts = [0usize; 7];
        for _ in 0..draws {
            let (p, m) = randnear_pair(&lists, 0, &mut rng).unwrap();
            plus_counts[p] += 1;
            minus_counts[m] += 1;
        }
        let check = |counts: &[usize], support: &[usize]| {
            let p = 1.0 / support.len() as f64;
            let mean = draws as f64 * p;
            let sd = (draws as f64 * p * (1.0 - p)).sqrt();
            for &c in support {
                assert!((counts[c] as f64 - mean).abs() <= 3.0 * sd, "{counts:?}");
            }
        };
        check(&plus_counts, &[1, 2, 3]);
        check(&minus_counts, &[4, 5, 6]);
        assert_eq!(plus_counts[0], 0);
    }

    #[test]
    fn same_seed_same_pairs() {
        let data = toy();
        let lists = neighbor_lists(&data, &MetricFactor::identity(2), 3).unwrap();
        let a = sample_triplets(&lists, &mut ChaCha8Rng::seed_from_u64(5));
        let b = sample_triplets(&lists, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn rank_one_factor_lists_match_per_instance() {
        let data = toy();
        let metric = MetricFactor::from_factor(array![[1.0, 0.5]]).unwrap();
        let lists = neighbor_lists(&data, &metric, 2).unwrap();
        for i in 0..data.len() {
            let (same, other) = nearest_peers(&data, &metric, i, 2).unwrap();
            assert_eq!(lists.same[i], same);
            assert_eq!(lists.other[i], other);
        }
    }

    #[test]
    fn lonely_instance_is_skipped() {
        let data = Dataset::from_rows(&[vec![0.0], vec![1.0], vec![2.0]], &[0, 0, 1]).unwrap();
        let lists = neighbor_lists(&data, &MetricFactor::identity(1), 10).unwrap();
        let (t, skipped) = sample_triplets(&lists, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(skipped, 1);
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn zero_epochs_returns_identity() {
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let report = train(&toy(), &cfg).unwrap();
        assert_eq!(report.metric, MetricFactor::identity(2));
        assert!(report.losses.is_empty());
        let cfg = TrainConfig {
            epochs: 0,
            factor_rows: Some(1),
            ..TrainConfig::default()
        };
        assert_eq!(
            train(&toy(), &cfg).unwrap().metric,
            MetricFactor::truncated_identity(1, 2)
        );
    }

    #[test]
    fn training_is_reproducible_and_returns_gram() {
        let cfg = TrainConfig {
            epochs: 20,
            neighborhood: 2,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train(&toy(), &cfg).unwrap();
        let b = train(&toy(), &cfg).unwrap();
        assert_eq!(a.metric, b.metric);
        assert_eq!(a.losses, b.losses);
        let g = a.metric.factor();
        assert_eq!(
            a.metric.matrix(),
            MetricFactor::from_factor(g.clone()).unwrap().matrix()
        );
    }

    #[test]
    fn exact_kth_selection() {
        // anchor 0 at the origin; K = 1 picks max over i, min over j
        let data = Dataset::from_rows(
            &[vec![0.0, 0.0], vec![0.5, 0.0], vec![2.0, 0.0], vec![0.0, 4.0]],
            &[0, 0, 1, 1],
        )
        .unwrap();
        let (t, skipped) = exact_kth_triplets(&data, &MetricFactor::identity(2), 1).unwrap();
        assert_eq!(skipped, 0);
        assert_eq!(
            t[0],
            Triplet {
                anchor: 0,
                plus: 1,
                minus: 2
            }
        );
        let (_, skipped) = exact_kth_triplets(&data, &MetricFactor::identity(2), 3).unwrap();
        // each anchor has only one same-class peer
        assert_eq!(skipped, 4);
    }

    #[test]
    fn rejects_bad_config() {
        let data = toy();
        for cfg in [
            TrainConfig {
                neighborhood: 0,
                ..Default::default()
            },
            TrainConfig {
                lr: 0.0,
                ..Default::default()
            },
            TrainConfig {
                beta1: 1.0,
                ..Default::default()
            },
            TrainConfig {
                k: 2,
                ..Default::default()
            },
            TrainConfig {
                factor_rows: Some(3),
                ..Default::default()
            },
        ] {
            assert!(train(&data, &TrainConfig { epochs: 1, ..cfg }).is_err());
        }
    }
}
