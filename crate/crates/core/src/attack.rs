//! Decision-based boundary attack on Mahalanobis K-NN.
//!
//! Only hard-label predictions are queried. The attack starts from the
//! nearest training point the model assigns to another class, walks it to
//! the decision boundary by bisection, then alternates random steps on the
//! sphere around `x` with contractions toward `x`, keeping only points that
//! stay misclassified.

use ndarray::{Array1, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::curve::{validate_radii, CurveKind, RobustErrorCurve};
use crate::dataset::Dataset;
use crate::error::{ArmlError, Result};
use crate::knn::KnnModel;

pub const DEFAULT_STEPS: usize = 1000;
const BISECTION_TOL: f64 = 1e-6;
const INITIAL_ORTHOGONAL: f64 = 0.1;
const INITIAL_CONTRACTION: f64 = 0.1;
const ADAPT_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    /// ‖δ̂‖, or `+∞` when no adversarial point was found.
    pub upper_bound: f64,
    /// `x + δ̂`.
    pub adversarial: Option<Array1<f64>>,
}

impl AttackResult {
    fn none() -> Self {
        Self {
            upper_bound: f64::INFINITY,
            adversarial: None,
        }
    }
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

struct Oracle<'a> {
    model: &'a KnnModel,
    y: usize,
}

impl Oracle<'_> {
    fn adversarial(&self, p: &Array1<f64>) -> Result<bool> {
        Ok(self.model.predict(p.view(), None)? != self.y)
    }
}

/// Moves `adv` toward `x` by bisection until the gap to the last
/// non-adversarial point is below the tolerance.
fn bisect(oracle: &Oracle<'_>, x: &Array1<f64>, adv: Array1<f64>) -> Result<Array1<f64>> {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let dir = &adv - x;
    let len = norm(&dir);
    let mut best = adv;
    while (hi - lo) * len > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        let p = x + &(&dir * mid);
        if oracle.adversarial(&p)? {
            hi = mid;
            best = p;
        } else {
            lo = mid;
        }
    }
    Ok(best)
}

/// Upper bound on the minimal adversarial perturbation at `(x, y)`.
///
/// Returns 0 when `x` is already misclassified and `+∞` when no training
/// point is predicted as another class.
pub fn boundary_attack(
    model: &KnnModel,
    x: ArrayView1<'_, f64>,
    y: usize,
    steps: usize,
    seed: u64,
) -> Result<AttackResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    attack_with_rng(model, x, y, steps, &mut rng)
}

fn attack_with_rng<R: Rng>(
    model: &KnnModel,
    x: ArrayView1<'_, f64>,
    y: usize,
    steps: usize,
    rng: &mut R,
) -> Result<AttackResult> {
    model.check_dim(x)?;
    let train = model.train();
    if train.labels().iter().all(|&l| l == y) {
        return Err(ArmlError::NotEnoughInstances {
            needed: 1,
            available: 0,
            context: "training instances of another class",
        });
    }
    let x = x.to_owned();
    let oracle = Oracle { model, y };
    if oracle.adversarial(&x)? {
        return Ok(AttackResult {
            upper_bound: 0.0,
            adversarial: Some(x),
        });
    }

    let mut order: Vec<(f64, usize)> = (0..train.len())
        .map(|i| {
            let d = &train.row(i) - &x;
            (d.dot(&d), i)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut init = None;
    for &(_, i) in &order {
        let p = train.row(i).to_owned();
        if oracle.adversarial(&p)? {
            init = Some(p);
            break;
        }
    }
    let Some(init) = init else {
        return Ok(AttackResult::none());
    };

    let mut best = bisect(&oracle, &x, init)?;
    let mut best_dist = norm(&(&best - &x));
    let dim = x.len();
    let mut orth = INITIAL_ORTHOGONAL;
    let mut contract = INITIAL_CONTRACTION;
    let (mut orth_trials, mut orth_hits, mut step_trials, mut step_hits) = (0usize, 0usize, 0usize, 0usize);

    for _ in 0..steps {
        let dir = &best - &x;
        let dist = norm(&dir);
        if dist <= 0.0 {
            break;
        }
        let unit = &dir / dist;
        let mut eta: Array1<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let along = eta.dot(&unit);
        eta.scaled_add(-along, &unit);
        let eta_norm = norm(&eta);
        if eta_norm > 0.0 {
            eta *= orth * dist / eta_norm;
        }
        // step orthogonally, then back onto the sphere of radius `dist`
        let moved = &dir + &eta;
        let sphere = &x + &(&moved * (dist / norm(&moved)));
        orth_trials += 1;
        if oracle.adversarial(&sphere)? {
            orth_hits += 1;
            step_trials += 1;
            let candidate = &x + &((&sphere - &x) * (1.0 - contract));
            if oracle.adversarial(&candidate)? {
                step_hits += 1;
                let d = norm(&(&candidate - &x));
                if d < best_dist {
                    best = candidate;
                    best_dist = d;
                }
            }
        }
        if orth_trials == ADAPT_WINDOW {
            orth *= if 2 * orth_hits > orth_trials { 1.1 } else { 0.9 };
            orth_trials = 0;
            orth_hits = 0;
        }
        if step_trials == ADAPT_WINDOW {
            contract *= if 2 * step_hits > step_trials { 1.1 } else { 0.9 };
            contract = contract.min(0.5);
            step_trials = 0;
            step_hits = 0;
        }
    }

    debug_assert!(oracle.adversarial(&best)?);
    Ok(AttackResult {
        upper_bound: best_dist,
        adversarial: Some(best),
    })
}

/// Attacks every test instance in parallel; instance `i` uses the generator
/// seeded with `seed` on stream `i`.
pub fn attack_instances(model: &KnnModel, test: &Dataset, steps: usize, seed: u64) -> Result<Vec<AttackResult>> {
    if test.is_empty() {
        return Err(ArmlError::EmptyDataset);
    }
    (0..test.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            attack_with_rng(model, test.row(i), test.label(i), steps, &mut rng)
        })
        .collect()
}

/// Empirical robust error at each radius.
pub fn empirical_curve(
    model: &KnnModel,
    test: &Dataset,
    radii: &[f64],
    steps: usize,
    seed: u64,
) -> Result<RobustErrorCurve> {
    validate_radii(radii)?;
    let norms: Vec<f64> = attack_instances(model, test, steps, seed)?
        .iter()
        .map(|r| r.upper_bound)
        .collect();
    RobustErrorCurve::from_norms(&norms, radii, CurveKind::Empirical)
}
