//! Mahalanobis metric parameterized by a factor `G`, with `M = GᵀG`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{ArmlError, Result};

/// A learned factor `G` (`r x D`) together with the cached `M = GᵀG` (`D x D`).
///
/// `M` is always recomputed from `G`, so it is symmetric and positive
/// semi-definite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricFactor {
    g: Array2<f64>,
    m: Array2<f64>,
}

impl MetricFactor {
    pub fn from_factor(g: Array2<f64>) -> Result<Self> {
        let (r, d) = g.dim();
        if r == 0 || d == 0 {
            return Err(ArmlError::InvalidArgument("factor must be non-empty".into()));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(ArmlError::InvalidArgument("factor has non-finite entries".into()));
        }
        let m = gram(&g);
        Ok(Self { g, m })
    }

    /// The Euclidean baseline, `G = M = I`.
    pub fn identity(dim: usize) -> Self {
        Self::truncated_identity(dim, dim)
    }

    /// The leading `rows` rows of the identity, used as the low-rank start.
    pub fn truncated_identity(rows: usize, dim: usize) -> Self {
        let mut g = Array2::zeros((rows, dim));
        for k in 0..rows.min(dim) {
            g[[k, k]] = 1.0;
        }
        let m = gram(&g);
        Self { g, m }
    }

    pub fn factor(&self) -> &Array2<f64> {
        &self.g
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.m
    }

    pub fn dim(&self) -> usize {
        self.g.ncols()
    }

    pub fn rank_rows(&self) -> usize {
        self.g.nrows()
    }

    /// Metric with factor `√c · G`, i.e. `M' = c·M`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if c.is_nan() || c <= 0.0 {
            return Err(ArmlError::InvalidArgument(format!("scale must be positive, got {c}")));
        }
        Self::from_factor(&self.g * c.sqrt())
    }

    /// `G v`, the image of `v` in the learned space.
    pub fn project(&self, v: ArrayView1<'_, f64>) -> Array1<f64> {
        self.g.dot(&v)
    }

    /// `M v`.
    pub fn apply(&self, v: ArrayView1<'_, f64>) -> Array1<f64> {
        self.m.dot(&v)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    /// Header `r D`, then `r` rows of `D` values at 17 significant digits.
    pub fn to_text(&self) -> String {
        let (r, d) = self.g.dim();
        let mut out = format!("{r} {d}\n");
        for row in self.g.rows() {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(' ');
                }
                first = false;
                write!(out, "{v:.16e}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| ArmlError::MetricFormat("missing header".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| ArmlError::MetricFormat(format!("bad header `{header}`")))?;
        let [r, d] = dims[..] else {
            return Err(ArmlError::MetricFormat(format!("header must be `r D`, got `{header}`")));
        };
        let mut g = Array2::zeros((r, d));
        let mut seen = 0;
        for (i, line) in lines.enumerate() {
            if i >= r {
                return Err(ArmlError::MetricFormat(format!("more than {r} rows")));
            }
            let values: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| ArmlError::MetricFormat(format!("row {}: bad number", i + 1)))?;
            if values.len() != d {
                return Err(ArmlError::MetricFormat(format!(
                    "row {}: expected {d} values, found {}",
                    i + 1,
                    values.len()
                )));
            }
            for (k, v) in values.into_iter().enumerate() {
                g[[i, k]] = v;
            }
            seen += 1;
        }
        if seen != r {
            return Err(ArmlError::MetricFormat(format!(
                "header declares {r} rows, found {seen}"
            )));
        }
        Self::from_factor(g)
    }
}

fn gram(g: &Array2<f64>) -> Array2<f64> {
    let m = g.t().dot(g);
    // enforce exact symmetry regardless of summation order
    let d = m.nrows();
    let mut sym = m.clone();
    for a in 0..d {
        for b in (a + 1)..d {
            sym[[b, a]] = m[[a, b]];
        }
    }
    sym
}

/// `(x − x')ᵀ M (x − x')`, the squared-form Mahalanobis distance, clamped at 0.
pub fn mahalanobis_distance(metric: &MetricFactor, x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<f64> {
    let d = metric.dim();
    if x.len() != d || y.len() != d {
        return Err(ArmlError::DimensionMismatch {
            expected: d,
            found: if x.len() != d { x.len() } else { y.len() },
        });
    }
    let diff = &x - &y;
    Ok(quadratic_form(metric.matrix(), diff.view()).max(0.0))
}

pub(crate) fn quadratic_form(m: &Array2<f64>, v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&m.dot(&v))
}
