//! Exact minimal adversarial perturbation for Mahalanobis 1-NN.
//!
//! For a correctly classified `(x, y)` the minimal ℓ₂ perturbation is the
//! minimum, over differently labeled training points `x_j`, of
//!
//! ```text
//! min ‖δ‖  s.t.  (x_i − x_j)ᵀ M δ ≤ ½ (d_M(x, x_i) − d_M(x, x_j))   ∀ i : y_i = y
//! ```
//!
//! Each inner problem is solved through its dual, `min_{λ≥0} ½λᵀPλ + qᵀλ` with
//! `P = ½AAᵀ`, `q = b`, by greedy coordinate descent; the primal point is
//! recovered as `δ = −½Aᵀλ`. Candidates are visited in ascending distance and
//! skipped whenever the closed-form triplet bound already reaches the
//! incumbent.

use ndarray::{Array1, Array2, ArrayView1};

use crate::certify::triplet_from_parts;
use crate::dataset::Dataset;
use crate::error::{ArmlError, Result};
use crate::knn::KnnModel;
use crate::metric::MetricFactor;

/// Rows with `‖a_i‖` below this are duplicate constraint directions.
const DEGENERATE_ROW: f64 = 1e-12;

/// Access to a symmetric PSD matrix by diagonal entry and column.
pub trait QpMatrix {
    fn size(&self) -> usize;
    fn diag(&self, i: usize) -> f64;
    fn column_into(&self, i: usize, out: &mut [f64]);
}

impl QpMatrix for Array2<f64> {
    fn size(&self) -> usize {
        self.nrows()
    }

    fn diag(&self, i: usize) -> f64 {
        self[[i, i]]
    }

    fn column_into(&self, i: usize, out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(self.column(i)) {
            *o = *v;
        }
    }
}

/// `P = ½ A Aᵀ`, materialized one column at a time.
struct HalfGram<'a> {
    rows: &'a Array2<f64>,
}

impl QpMatrix for HalfGram<'_> {
    fn size(&self) -> usize {
        self.rows.nrows()
    }

    fn diag(&self, i: usize) -> f64 {
        let a = self.rows.row(i);
        0.5 * a.dot(&a)
    }

    fn column_into(&self, i: usize, out: &mut [f64]) {
        let a = self.rows.row(i);
        for (o, r) in out.iter_mut().zip(self.rows.rows()) {
            *o = 0.5 * r.dot(&a);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub lambda: Vec<f64>,
    /// `½λᵀPλ + qᵀλ` at `lambda`.
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct GreedyCd<'a, P: QpMatrix> {
    p: &'a P,
    q: &'a [f64],
    diag: Vec<f64>,
    lambda: Vec<f64>,
    grad: Vec<f64>,
    columns: Vec<Option<Box<[f64]>>>,
    iterations: usize,
}

impl<'a, P: QpMatrix> GreedyCd<'a, P> {
    fn new(p: &'a P, q: &'a [f64]) -> Result<Self> {
        let s = q.len();
        if p.size() != s {
            return Err(ArmlError::DimensionMismatch {
                expected: s,
                found: p.size(),
            });
        }
        let diag: Vec<f64> = (0..s).map(|i| p.diag(i)).collect();
        for (i, (&d, &qi)) in diag.iter().zip(q).enumerate() {
            if d < 0.0 || !d.is_finite() || !qi.is_finite() {
                return Err(ArmlError::InvalidArgument(format!(
                    "invalid QP entry at coordinate {i}"
                )));
            }
            // P PSD with P_ii = 0 means column i vanishes: the objective is
            // linear along e_i.
            if d == 0.0 && qi < 0.0 {
                return Err(ArmlError::UnboundedQp { coordinate: i });
            }
        }
        Ok(Self {
            p,
            q,
            diag,
            lambda: vec![0.0; s],
            grad: q.to_vec(),
            columns: vec![None; s],
            iterations: 0,
        })
    }

    /// Largest projected coordinate step `(i*, y_i*)`.
    fn best_step(&self) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.lambda.len() {
            let d = self.diag[i];
            if d == 0.0 {
                continue;
            }
            let step = (self.lambda[i] - self.grad[i] / d).max(0.0) - self.lambda[i];
            if best.is_none_or(|(_, b)| step.abs() > b.abs()) {
                best = Some((i, step));
            }
        }
        best
    }

    /// Runs up to `budget` more iterations; true once `max_i |y_i| < tol`.
    fn run(&mut self, budget: usize, tol: f64) -> bool {
        let s = self.lambda.len();
        for _ in 0..budget {
            let Some((i, step)) = self.best_step() else {
                return true;
            };
            if step.abs() < tol {
                return true;
            }
            self.lambda[i] += step;
            if self.columns[i].is_none() {
                let mut col = vec![0.0; s].into_boxed_slice();
                self.p.column_into(i, &mut col);
                self.columns[i] = Some(col);
            }
            let col = self.columns[i].as_deref().unwrap();
            for (g, c) in self.grad.iter_mut().zip(col) {
                *g += step * c;
            }
            self.iterations += 1;
        }
        self.best_step().is_none_or(|(_, y)| y.abs() < tol)
    }

    fn value(&self) -> f64 {
        // g = Pλ + q  ⇒  ½λᵀPλ + qᵀλ = ½λᵀ(g + q)
        0.5 * self
            .lambda
            .iter()
            .zip(self.grad.iter().zip(self.q))
            .map(|(l, (g, q))| l * (g + q))
            .sum::<f64>()
    }

    fn into_solution(self, converged: bool) -> QpSolution {
        let value = self.value();
        QpSolution {
            lambda: self.lambda,
            value,
            iterations: self.iterations,
            converged,
        }
    }
}

/// Greedy coordinate descent for `min_{λ ≥ 0} ½λᵀPλ + qᵀλ`.
///
/// Each iteration computes `y_i = max(λ_i − g_i/P_ii, 0) − λ_i` for every
/// coordinate, moves along the one with the largest `|y_i|`, and stops once
/// that step is below `tol` or after `max_iter` iterations. Coordinates with
/// `P_ii = 0` stay at zero when `q_i ≥ 0`; with `q_i < 0` the problem is
/// unbounded and an error is returned.
pub fn gcd_qp(p: &Array2<f64>, q: &[f64], max_iter: usize, tol: f64) -> Result<QpSolution> {
    if !p.is_square() {
        return Err(ArmlError::InvalidArgument("P must be square".into()));
    }
    let mut solver = GreedyCd::new(p, q)?;
    let converged = solver.run(max_iter, tol);
    Ok(solver.into_solution(converged))
}

/// Default stopping tolerance `1e−9 · (1 + ‖q‖∞)`.
pub fn default_tolerance(q: &[f64]) -> f64 {
    1e-9 * (1.0 + q.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Iteration cap per attempt; `None` means `20 · s · D`.
    pub max_iter: Option<usize>,
    /// Extra attempts, each with ten times the previous budget, when the
    /// first one does not converge.
    pub retries: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: None,
            retries: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinNormSolution {
    pub delta: Array1<f64>,
    pub norm: f64,
    /// Optimal value of the dual QP in minimization form; `−dual_value`
    /// equals `‖δ‖²` at optimality and is a lower bound on it otherwise.
    pub dual_value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimum-norm `δ` with `A δ ≤ b`, solved through the dual.
///
/// Rows with `‖a_i‖ < 1e−12` are dropped: they arise from duplicate training
/// points, for which the constraint reads `0 ≤ 0`.
pub fn min_norm_halfspaces(a: &Array2<f64>, b: &[f64], opts: &SolverOptions) -> Result<MinNormSolution> {
    let (s, d) = a.dim();
    if b.len() != s {
        return Err(ArmlError::DimensionMismatch {
            expected: s,
            found: b.len(),
        });
    }
    let keep: Vec<usize> = (0..s)
        .filter(|&i| a.row(i).dot(&a.row(i)).sqrt() >= DEGENERATE_ROW)
        .collect();
    if keep.iter().all(|&i| b[i] >= 0.0) {
        return Ok(MinNormSolution {
            delta: Array1::zeros(d),
            norm: 0.0,
            dual_value: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    let rows = a.select(ndarray::Axis(0), &keep);
    let q: Vec<f64> = keep.iter().map(|&i| b[i]).collect();
    let gram = HalfGram { rows: &rows };
    let tol = default_tolerance(&q);
    let mut budget = opts.max_iter.unwrap_or(20 * keep.len() * d).max(1);

    let mut solver = GreedyCd::new(&gram, &q)?;
    let mut converged = solver.run(budget, tol);
    for _ in 0..opts.retries {
        if converged {
            break;
        }
        budget = budget.saturating_mul(10);
        converged = solver.run(budget, tol);
    }
    let sol = solver.into_solution(converged);

    if sol.converged {
        if let Some(delta) = polish(&rows, &q, &sol.lambda) {
            let sq = delta.dot(&delta);
            return Ok(MinNormSolution {
                delta,
                norm: sq.sqrt(),
                dual_value: -sq,
                iterations: sol.iterations,
                converged: true,
            });
        }
    }
    let mut delta = Array1::zeros(d);
    for (row, &l) in rows.rows().into_iter().zip(&sol.lambda) {
        if l != 0.0 {
            delta.scaled_add(-0.5 * l, &row);
        }
    }
    let norm = delta.dot(&delta).sqrt();
    Ok(MinNormSolution {
        delta,
        norm,
        dual_value: sol.value,
        iterations: sol.iterations,
        converged: sol.converged,
    })
}

/// Re-solves the problem restricted to the dual support as an equality
/// system: `δ = A_Sᵀμ` with `A_S A_Sᵀ μ = b_S`. The result is accepted only if
/// it satisfies the KKT conditions (`μ ≤ 0`, `Aδ ≤ b`), which makes it the
/// exact optimum up to rounding rather than an iterate near it.
fn polish(rows: &Array2<f64>, b: &[f64], lambda: &[f64]) -> Option<Array1<f64>> {
    let support: Vec<usize> = (0..lambda.len()).filter(|&i| lambda[i] > 0.0).collect();
    if support.is_empty() || support.len() > rows.ncols() {
        return None;
    }
    let a_s = rows.select(ndarray::Axis(0), &support);
    let gram = a_s.dot(&a_s.t());
    let rhs: Vec<f64> = support.iter().map(|&i| b[i]).collect();
    let mu = solve_dense(gram, rhs)?;
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    if mu.iter().any(|&m| m > 1e-12 * scale) {
        return None;
    }
    let delta = a_s.t().dot(&Array1::from(mu));
    let feasible = rows
        .rows()
        .into_iter()
        .zip(b)
        .all(|(row, &bi)| row.dot(&delta) <= bi + 1e-12 * (scale + bi.abs()));
    feasible.then_some(delta)
}

/// Gaussian elimination with partial pivoting; `None` for (near) singular
/// systems.
fn solve_dense(mut a: Array2<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))?;
        if a[[piv, col]].abs() < 1e-12 * scale {
            return None;
        }
        if piv != col {
            for c in 0..n {
                a.swap([col, c], [piv, c]);
            }
            b.swap(col, piv);
        }
        for row in col + 1..n {
            let f = a[[row, col]] / a[[col, col]];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[[row, c]] -= f * a[[col, c]];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[[row, c]] * x[c]).sum();
        x[row] = (b[row] - s) / a[[row, row]];
    }
    Some(x)
}

/// A minimal perturbation found for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub eps: f64,
    pub delta: Array1<f64>,
    /// Training index of the differently labeled point whose cell is reached.
    pub target: Option<usize>,
    pub converged: bool,
}

impl Perturbation {
    fn zero(dim: usize) -> Self {
        Self {
            eps: 0.0,
            delta: Array1::zeros(dim),
            target: None,
            converged: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Screening {
    #[default]
    Enabled,
    Disabled,
}

/// Precomputed per-query state shared by the inner problems.
struct Query<'a> {
    model: &'a KnnModel,
    dist: Vec<f64>,
    /// Same-class indices in ascending distance.
    same: Vec<usize>,
}

impl<'a> Query<'a> {
    fn new(model: &'a KnnModel, x: ArrayView1<'_, f64>, y: usize, exclude: Option<usize>) -> Result<Self> {
        let dist = model.distances(x)?;
        let labels = model.train().labels();
        let mut same: Vec<usize> = (0..dist.len())
            .filter(|&i| labels[i] == y && Some(i) != exclude)
            .collect();
        if same.is_empty() {
            return Err(ArmlError::NotEnoughInstances {
                needed: 1,
                available: 0,
                context: "same-class training instances",
            });
        }
        same.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
        Ok(Self { model, dist, same })
    }

    fn triplet(&self, i: usize, j: usize) -> f64 {
        let mapped = self.model.mapped();
        triplet_from_parts(self.dist[i], self.dist[j], mapped.row(i), mapped.row(j))
    }

    /// `max_i [ε̃(x_i, x_j, x)]₊`, stopping early once `cutoff` is reached.
    fn screening_bound(&self, j: usize, cutoff: f64) -> f64 {
        let mut best = 0.0f64;
        for &i in &self.same {
            best = best.max(self.triplet(i, j));
            if best >= cutoff {
                break;
            }
        }
        best
    }

    fn solve_inner(&self, j: usize, opts: &SolverOptions) -> Result<Perturbation> {
        let mapped = self.model.mapped();
        let d = mapped.ncols();
        let mut a = Array2::zeros((self.same.len(), d));
        let mut b = Vec::with_capacity(self.same.len());
        let mj = mapped.row(j);
        for (r, &i) in self.same.iter().enumerate() {
            let mut row = a.row_mut(r);
            row.assign(&mapped.row(i));
            row -= &mj;
            b.push(0.5 * (self.dist[i] - self.dist[j]));
        }
        let sol = min_norm_halfspaces(&a, &b, opts)?;
        Ok(Perturbation {
            eps: sol.norm,
            delta: sol.delta,
            target: Some(j),
            converged: sol.converged,
        })
    }
}

/// Minimal perturbation moving `x` into the Voronoi cell of training point `j`
/// (closer to `x_j` than to every same-class point).
pub fn inner_minimal_perturbation(
    model: &KnnModel,
    x: ArrayView1<'_, f64>,
    y: usize,
    j: usize,
    exclude: Option<usize>,
) -> Result<Perturbation> {
    if j >= model.train().len() || model.train().label(j) == y || Some(j) == exclude {
        return Err(ArmlError::InvalidArgument(format!(
            "candidate {j} must be a differently labeled training instance"
        )));
    }
    Query::new(model, x, y, exclude)?.solve_inner(j, &SolverOptions::default())
}

/// Exact minimal ℓ₂ perturbation changing a 1-NN prediction away from `y`.
///
/// Returns zero for instances that are already misclassified.
pub fn exact_minimal_perturbation(
    model: &KnnModel,
    x: ArrayView1<'_, f64>,
    y: usize,
    exclude: Option<usize>,
    screening: Screening,
) -> Result<Perturbation> {
    exact_minimal_perturbation_with(model, x, y, exclude, screening, &SolverOptions::default())
}

pub fn exact_minimal_perturbation_with(
    model: &KnnModel,
    x: ArrayView1<'_, f64>,
    y: usize,
    exclude: Option<usize>,
    screening: Screening,
    opts: &SolverOptions,
) -> Result<Perturbation> {
    if model.k() != 1 {
        return Err(ArmlError::InvalidArgument(format!(
            "exact verification needs K = 1, got {}",
            model.k()
        )));
    }
    model.check_dim(x)?;
    let labels = model.train().labels();
    if !(0..labels.len()).any(|j| labels[j] != y && Some(j) != exclude) {
        return Err(ArmlError::NotEnoughInstances {
            needed: 1,
            available: 0,
            context: "differently labeled training instances",
        });
    }
    if model.predict(x, exclude)? != y {
        return Ok(Perturbation::zero(x.len()));
    }
    let query = Query::new(model, x, y, exclude)?;
    let dist = &query.dist;
    let mut candidates: Vec<usize> = (0..labels.len())
        .filter(|&j| labels[j] != y && Some(j) != exclude)
        .collect();
    candidates.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));

    let mut best: Option<Perturbation> = None;
    for j in candidates {
        let incumbent = best.as_ref().map_or(f64::INFINITY, |p| p.eps);
        if screening == Screening::Enabled && query.screening_bound(j, incumbent) >= incumbent {
            continue;
        }
        let p = query.solve_inner(j, opts)?;
        if p.eps < incumbent {
            best = Some(p);
        }
    }
    Ok(best.expect("at least one candidate is solved"))
}

/// Convenience form building a 1-NN model on the fly.
pub fn exact_minimal_perturbation_for(
    train: &Dataset,
    metric: &MetricFactor,
    x: ArrayView1<'_, f64>,
    y: usize,
    exclude: Option<usize>,
) -> Result<Perturbation> {
    let model = KnnModel::new(train.clone(), metric.clone(), 1)?;
    exact_minimal_perturbation(&model, x, y, exclude, Screening::Enabled)
}
