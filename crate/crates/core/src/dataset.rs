//! Labeled datasets and the LIBSVM text format.
//!
//! Features are stored densely (row-major `N x D`); absent sparse indices are
//! zero. Original label values are remapped to contiguous class ids `0..C` in
//! ascending order of value, and the mapping is kept for reporting.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ArmlError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    /// Original label value for each class id.
    label_values: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from dense features and already-remapped class ids.
    pub fn new(features: Array2<f64>, labels: Vec<usize>, label_values: Vec<f64>) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 || d == 0 {
            return Err(ArmlError::EmptyDataset);
        }
        if labels.len() != n {
            return Err(ArmlError::DimensionMismatch {
                expected: n,
                found: labels.len(),
            });
        }
        if label_values.is_empty() {
            return Err(ArmlError::InvalidArgument("no classes".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= label_values.len()) {
            return Err(ArmlError::InvalidArgument(format!(
                "class id {bad} out of range for {} classes",
                label_values.len()
            )));
        }
        Ok(Self {
            features,
            labels,
            label_values,
        })
    }

    /// Convenience constructor using class ids as label values.
    pub fn from_rows(rows: &[Vec<f64>], labels: &[usize]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(ArmlError::EmptyDataset);
        }
        let d = rows[0].len();
        let mut features = Array2::zeros((n, d));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(ArmlError::DimensionMismatch {
                    expected: d,
                    found: row.len(),
                });
            }
            for (k, &v) in row.iter().enumerate() {
                features[[i, k]] = v;
            }
        }
        let c = labels.iter().copied().max().map_or(0, |m| m + 1);
        Self::new(features, labels.to_vec(), (0..c).map(|v| v as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.label_values.len()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn label_values(&self) -> &[f64] {
        &self.label_values
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Selects the given rows (in the given order); class mapping is kept.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(ArmlError::EmptyDataset);
        }
        let d = self.dim();
        let mut features = Array2::zeros((rows.len(), d));
        let mut labels = Vec::with_capacity(rows.len());
        for (out, &i) in rows.iter().enumerate() {
            features.row_mut(out).assign(&self.features.row(i));
            labels.push(self.labels[i]);
        }
        Ok(Self {
            features,
            labels,
            label_values: self.label_values.clone(),
        })
    }

    /// Zero-pads features to `dim` columns.
    pub fn pad_to(&self, dim: usize) -> Result<Self> {
        if dim < self.dim() {
            return Err(ArmlError::DimensionMismatch {
                expected: dim,
                found: self.dim(),
            });
        }
        let mut features = Array2::zeros((self.len(), dim));
        features.slice_mut(ndarray::s![.., ..self.dim()]).assign(&self.features);
        Ok(Self {
            features,
            labels: self.labels.clone(),
            label_values: self.label_values.clone(),
        })
    }

    /// Remaps class ids onto a superset of this dataset's label values.
    fn remap_onto(&self, values: &[f64]) -> Result<Self> {
        let lookup: Vec<usize> = self
            .label_values
            .iter()
            .map(|v| {
                values
                    .iter()
                    .position(|u| u == v)
                    .ok_or_else(|| ArmlError::InvalidArgument(format!("label {v} missing from mapping")))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            features: self.features.clone(),
            labels: self.labels.iter().map(|&y| lookup[y]).collect(),
            label_values: values.to_vec(),
        })
    }

    /// Serializes to LIBSVM text, omitting zero features.
    pub fn to_libsvm(&self) -> String {
        let mut out = String::new();
        for (i, &y) in self.labels.iter().enumerate() {
            write!(out, "{}", self.label_values[y]).unwrap();
            for (k, &v) in self.features.row(i).iter().enumerate() {
                if v != 0.0 {
                    write!(out, " {}:{}", k + 1, v).unwrap();
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn save_libsvm(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_libsvm())?;
        Ok(())
    }
}

struct RawRow {
    label: f64,
    entries: Vec<(usize, f64)>,
}

fn parse_rows(text: &str) -> Result<(Vec<RawRow>, usize)> {
    let mut rows = Vec::new();
    let mut max_index = 0usize;
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut tokens = content.split_whitespace();
        let Some(label_tok) = tokens.next() else {
            continue;
        };
        let label: f64 = label_tok.parse().map_err(|_| ArmlError::Parse {
            line,
            message: format!("bad label `{label_tok}`"),
        })?;
        if !label.is_finite() {
            return Err(ArmlError::Parse {
                line,
                message: format!("non-finite label `{label_tok}`"),
            });
        }
        let mut entries = Vec::new();
        let mut last = 0usize;
        for tok in tokens {
            let (idx_s, val_s) = tok.split_once(':').ok_or_else(|| ArmlError::Parse {
                line,
                message: format!("expected `index:value`, found `{tok}`"),
            })?;
            let idx: usize = idx_s.parse().map_err(|_| ArmlError::Parse {
                line,
                message: format!("bad index `{idx_s}`"),
            })?;
            if idx == 0 {
                return Err(ArmlError::Parse {
                    line,
                    message: "indices are 1-based".into(),
                });
            }
            if idx <= last {
                return Err(ArmlError::Parse {
                    line,
                    message: format!("index {idx} does not increase (previous {last})"),
                });
            }
            let val: f64 = val_s.parse().map_err(|_| ArmlError::Parse {
                line,
                message: format!("bad value `{val_s}`"),
            })?;
            if !val.is_finite() {
                return Err(ArmlError::Parse {
                    line,
                    message: format!("non-finite value `{val_s}`"),
                });
            }
            last = idx;
            entries.push((idx, val));
        }
        max_index = max_index.max(last);
        rows.push(RawRow { label, entries });
    }
    if rows.is_empty() {
        return Err(ArmlError::EmptyDataset);
    }
    Ok((rows, max_index))
}

fn densify(rows: &[RawRow], dim: usize, label_values: &[f64]) -> Result<Dataset> {
    let mut features = Array2::zeros((rows.len(), dim));
    let mut labels = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        for &(idx, val) in &row.entries {
            features[[i, idx - 1]] = val;
        }
        let y = label_values
            .iter()
            .position(|&v| v == row.label)
            .ok_or_else(|| ArmlError::InvalidArgument(format!("label {} not in mapping", row.label)))?;
        labels.push(y);
    }
    Dataset::new(features, labels, label_values.to_vec())
}

/// Parses LIBSVM text into a dense dataset.
///
/// `D` is the largest index seen, or `dim_hint` if that is larger. Distinct
/// label values are mapped to class ids in ascending order.
pub fn parse_libsvm(text: &str, dim_hint: Option<usize>) -> Result<Dataset> {
    let (rows, max_index) = parse_rows(text)?;
    let dim = max_index.max(dim_hint.unwrap_or(0));
    if dim == 0 {
        return Err(ArmlError::InvalidArgument("dataset has no features".into()));
    }
    let mut values: Vec<f64> = rows.iter().map(|r| r.label).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    densify(&rows, dim, &values)
}

pub fn load_libsvm(path: impl AsRef<Path>, dim_hint: Option<usize>) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    parse_libsvm(&text, dim_hint)
}

/// Brings a train/test pair onto a common feature dimension and a shared
/// class mapping (the sorted union of both label sets).
pub fn harmonize(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset)> {
    let dim = train.dim().max(test.dim());
    let mut values: Vec<f64> = train
        .label_values()
        .iter()
        .chain(test.label_values())
        .copied()
        .collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    Ok((
        train.pad_to(dim)?.remap_onto(&values)?,
        test.pad_to(dim)?.remap_onto(&values)?,
    ))
}

/// Draws `n` instances uniformly without replacement; the result keeps the
/// original row order.
pub fn sample_subset(data: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(ArmlError::InvalidArgument("sample size must be positive".into()));
    }
    if n > data.len() {
        return Err(ArmlError::NotEnoughInstances {
            needed: n,
            available: data.len(),
            context: "sample_subset",
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = index::sample(&mut rng, data.len(), n).into_vec();
    rows.sort_unstable();
    data.select(&rows)
}

/// Per-feature affine rescaling onto `[lower, upper]`, fitted on one dataset
/// and applied to others. Constant features are left unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxScaler {
    min: Vec<f64>,
    max: Vec<f64>,
    lower: f64,
    upper: f64,
}

impl MinMaxScaler {
    pub fn fit(data: &Dataset, lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || lower >= upper {
            return Err(ArmlError::InvalidArgument(format!(
                "scaling range [{lower}, {upper}] is empty"
            )));
        }
        let d = data.dim();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for row in data.features().rows() {
            for (k, &v) in row.iter().enumerate() {
                min[k] = min[k].min(v);
                max[k] = max[k].max(v);
            }
        }
        Ok(Self { min, max, lower, upper })
    }

    pub fn transform(&self, data: &Dataset) -> Result<Dataset> {
        if data.dim() != self.min.len() {
            return Err(ArmlError::DimensionMismatch {
                expected: self.min.len(),
                found: data.dim(),
            });
        }
        let mut features = data.features().clone();
        for mut row in features.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                let span = self.max[k] - self.min[k];
                if span > 0.0 {
                    *v = self.lower + (self.upper - self.lower) * (*v - self.min[k]) / span;
                }
            }
        }
        Dataset::new(features, data.labels().to_vec(), data.label_values().to_vec())
    }
}
