//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use arml::trainer::{objective_and_gradient, LossFn, Triplet};
use arml::{Dataset, MetricFactor};
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| normal(rng))
}

/// Random factor with a random number of rows in `1..=max_rows`.
pub fn random_metric<R: Rng>(rng: &mut R, dim: usize, max_rows: usize) -> MetricFactor {
    let rows = rng.random_range(1..=max_rows);
    MetricFactor::from_factor(gaussian_matrix(rng, rows, dim)).unwrap()
}

/// `n` Gaussian points with labels drawn from `classes`, every class present.
pub fn random_dataset<R: Rng>(rng: &mut R, n: usize, dim: usize, classes: usize) -> Dataset {
    assert!(n >= classes);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| normal(rng)).collect()).collect();
    let mut labels: Vec<usize> = (0..n)
        .map(|i| if i < classes { i } else { rng.random_range(0..classes) })
        .collect();
    for i in (1..n).rev() {
        labels.swap(i, rng.random_range(0..=i));
    }
    Dataset::from_rows(&rows, &labels).unwrap()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn quad(m: &Array2<f64>, u: &[f64]) -> f64 {
    let d = u.len();
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += u[i] * m[[i, j]] * u[j];
        }
    }
    s
}

pub fn mat_vec(m: &Array2<f64>, u: &[f64]) -> Vec<f64> {
    (0..m.nrows())
        .map(|i| (0..u.len()).map(|j| m[[i, j]] * u[j]).sum())
        .collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting; `None`
/// when a pivot falls below `1e-12` times the largest entry.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            let pivot_row = a[col].clone();
            for (dst, src) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *dst -= f * src;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

fn combinations(n: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, f);
            cur.pop();
        }
    }
    rec(0, n, k, &mut Vec::with_capacity(k), f);
}

/// `min ‖δ‖ s.t. a_i·δ ≤ b_i` by enumerating candidate active sets of at
/// most `D` constraints: the projection of the origin onto the polyhedron is
/// the least-norm point of the affine hull of its active constraints.
/// Returns `+∞` when no candidate is feasible.
pub fn min_norm_polyhedron(a: &[Vec<f64>], b: &[f64]) -> f64 {
    let m = a.len();
    let d = a.first().map_or(0, Vec::len);
    let feasible = |delta: &[f64]| {
        a.iter()
            .zip(b)
            .all(|(row, &bi)| dot(row, delta) <= bi + 1e-9 * (1.0 + bi.abs()))
    };
    if feasible(&vec![0.0; d]) {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for size in 1..=d.min(m) {
        combinations(m, size, &mut |set| {
            let gram: Vec<Vec<f64>> = set
                .iter()
                .map(|&i| set.iter().map(|&j| dot(&a[i], &a[j])).collect())
                .collect();
            let rhs: Vec<f64> = set.iter().map(|&i| b[i]).collect();
            let Some(mu) = solve(gram, rhs) else {
                return;
            };
            let mut delta = vec![0.0; d];
            for (&i, &w) in set.iter().zip(&mu) {
                for (dv, av) in delta.iter_mut().zip(&a[i]) {
                    *dv += w * av;
                }
            }
            if feasible(&delta) {
                best = best.min(dot(&delta, &delta).sqrt());
            }
        });
    }
    best
}

/// Minimal adversarial perturbation of K-NN (binary labels, or K = 1 with
/// any labels) by enumerating every pair `(I, J)`: `J` holds `k` other-class
/// instances, `I` the `k − 1` same-class instances allowed to stay closer.
pub fn knn_brute_force(train: &Dataset, metric: &MetricFactor, x: &[f64], y: usize, k_neighbors: usize) -> f64 {
    let k = k_neighbors.div_ceil(2);
    let m = metric.matrix();
    let rows: Vec<Vec<f64>> = (0..train.len()).map(|i| train.row(i).to_vec()).collect();
    let same: Vec<usize> = (0..train.len()).filter(|&i| train.label(i) == y).collect();
    let other: Vec<usize> = (0..train.len()).filter(|&i| train.label(i) != y).collect();
    if other.len() < k {
        return f64::INFINITY;
    }
    let dist: Vec<f64> = rows.iter().map(|r| quad(m, &sub(x, r))).collect();
    let keep = (k - 1).min(same.len());
    let mut best = f64::INFINITY;
    combinations(other.len(), k, &mut |js| {
        combinations(same.len(), keep, &mut |is| {
            let mut a = Vec::new();
            let mut b = Vec::new();
            for &jj in js {
                let j = other[jj];
                for (pos, &i) in same.iter().enumerate() {
                    if is.contains(&pos) {
                        continue;
                    }
                    a.push(mat_vec(m, &sub(&rows[i], &rows[j])));
                    b.push(0.5 * (dist[i] - dist[j]));
                }
            }
            best = best.min(min_norm_polyhedron(&a, &b));
        });
    });
    best
}

/// Accelerated projected gradient with adaptive restart for
/// `min ½λᵀPλ + qᵀλ, λ ≥ 0`; returns the objective value.
pub fn projected_gradient_qp(p: &Array2<f64>, q: &[f64], iters: usize) -> f64 {
    let s = q.len();
    let obj = |l: &[f64]| 0.5 * dot(l, &mat_vec(p, l)) + dot(q, l);
    // power iteration for the largest eigenvalue
    let mut v = vec![1.0; s];
    let mut lmax = 0.0;
    for _ in 0..200 {
        let w = mat_vec(p, &v);
        let n = dot(&w, &w).sqrt();
        if n == 0.0 {
            break;
        }
        lmax = n / dot(&v, &v).sqrt();
        v = w.iter().map(|x| x / n).collect();
    }
    let step = 1.0 / (1.05 * lmax).max(1e-300);
    let mut x = vec![0.0; s];
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut f_prev = obj(&x);
    for _ in 0..iters {
        let g: Vec<f64> = mat_vec(p, &z).iter().zip(q).map(|(a, b)| a + b).collect();
        let x_new: Vec<f64> = z.iter().zip(&g).map(|(zi, gi)| (zi - step * gi).max(0.0)).collect();
        let f_new = obj(&x_new);
        if f_new > f_prev {
            // restart momentum
            t = 1.0;
            z = x.clone();
            continue;
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_new;
        z = x_new.iter().zip(&x).map(|(a, b)| a + beta * (a - b)).collect();
        let moved: f64 = x_new.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = x_new;
        t = t_new;
        f_prev = f_new;
        if moved < 1e-15 {
            break;
        }
    }
    obj(&x)
}

/// Central finite-difference gradient of the training objective.
pub fn finite_difference_gradient(
    data: &Dataset,
    g: &Array2<f64>,
    loss: LossFn,
    triplets: &[Triplet],
    h: f64,
) -> Array2<f64> {
    let mut out = Array2::zeros(g.raw_dim());
    for idx in ndarray::indices(g.raw_dim()) {
        let mut gp = g.clone();
        gp[idx] += h;
        let mut gm = g.clone();
        gm[idx] -= h;
        let fp = objective_and_gradient(data, &gp, loss, triplets).unwrap().0;
        let fm = objective_and_gradient(data, &gm, loss, triplets).unwrap().0;
        out[idx] = (fp - fm) / (2.0 * h);
    }
    out
}
