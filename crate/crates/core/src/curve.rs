use std::io::{self, Write};

use crate::error::{ArmlError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveKind {
    Certified,
    Empirical,
}

/// Robust error as a function of the ℓ₂ radius.
///
/// `errors[t]` is the fraction of instances whose perturbation norm (a lower
/// bound for certified curves, an attack-found norm for empirical ones) is at
/// most `radii[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustErrorCurve {
    pub radii: Vec<f64>,
    pub errors: Vec<f64>,
    pub kind: CurveKind,
}

pub fn validate_radii(radii: &[f64]) -> Result<()> {
    if radii.is_empty() {
        return Err(ArmlError::InvalidArgument("no radii given".into()));
    }
    if radii.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(ArmlError::InvalidArgument(
            "radii must be finite and nonnegative".into(),
        ));
    }
    if radii.windows(2).any(|w| w[1] < w[0]) {
        return Err(ArmlError::InvalidArgument("radii must be ascending".into()));
    }
    Ok(())
}

impl RobustErrorCurve {
    /// Counts, per radius, the norms that do not exceed it. `+∞` never counts.
    pub fn from_norms(norms: &[f64], radii: &[f64], kind: CurveKind) -> Result<Self> {
        validate_radii(radii)?;
        if norms.is_empty() {
            return Err(ArmlError::EmptyDataset);
        }
        let n = norms.len() as f64;
        let errors = radii
            .iter()
            .map(|&r| norms.iter().filter(|&&v| v <= r).count() as f64 / n)
            .collect();
        Ok(Self {
            radii: radii.to_vec(),
            errors,
            kind,
        })
    }

    pub fn error_at(&self, radius: f64) -> Option<f64> {
        self.radii.iter().position(|&r| r == radius).map(|t| self.errors[t])
    }

    /// Writes `radius,robust_error`. Radii use `labels` verbatim when given
    /// (so they print exactly as the user typed them); errors use 6 decimals.
    pub fn write_csv<W: Write>(&self, mut out: W, labels: Option<&[String]>) -> io::Result<()> {
        writeln!(out, "radius,robust_error")?;
        for (t, (r, e)) in self.radii.iter().zip(&self.errors).enumerate() {
            match labels.and_then(|l| l.get(t)) {
                Some(label) => writeln!(out, "{label},{e:.6}")?,
                None => writeln!(out, "{r},{e:.6}")?,
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, None).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}
