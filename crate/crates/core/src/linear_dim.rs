// SPDX-License-Identifier: MIT OR Apache-2.0

//! Linear effective dimension from the covariance spectrum.

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::matrix::Matrix;

/// Descending covariance eigenvalues of a column-centered data matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSummary {
    eigenvalues: Vec<f64>,
    total_variance: f64,
}

impl SpectrumSummary {
    /// Sorts descending and clamps round-off negatives in `[-1e-10·λ₁, 0)` to zero.
    pub fn from_eigenvalues(mut eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            bail!(Parameter, "spectrum needs at least one eigenvalue");
        }
        if eigenvalues.iter().any(|v| !v.is_finite()) {
            bail!(Parameter, "spectrum contains non-finite eigenvalues");
        }
        eigenvalues.sort_by(|a, b| b.total_cmp(a));
        let floor = -1e-10 * eigenvalues[0].max(0.0);
        for v in eigenvalues.iter_mut() {
            if *v < 0.0 {
                if *v < floor {
                    bail!(Numerical, "eigenvalue {v} is negative beyond round-off");
                }
                *v = 0.0;
            }
        }
        let total_variance = eigenvalues.iter().sum();
        Ok(Self { eigenvalues, total_variance })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Covariance eigenvalues (`1/(N-1)` normalization) through the singular
/// values of the centered data, padded with zeros up to `D` entries.
pub fn covariance_spectrum(x: &Matrix) -> Result<SpectrumSummary> {
    let (n, d) = x.shape();
    if n < 2 {
        bail!(Parameter, "covariance needs at least 2 rows, got {n}");
    }
    let centered = x.centered().to_dmatrix();
    let singular = centered.singular_values();
    let scale = 1.0 / (n - 1) as f64;
    let mut eig: Vec<f64> = singular.iter().map(|s| s * s * scale).collect();
    eig.resize(d, 0.0);
    SpectrumSummary::from_eigenvalues(eig)
}

fn require_variance(s: &SpectrumSummary) -> Result<()> {
    if !(s.total_variance > 0.0) {
        bail!(Degenerate, "spectrum has zero total variance");
    }
    Ok(())
}

/// Smallest number of leading components whose share of variance reaches `threshold`.
pub fn pca_effective_dim(s: &SpectrumSummary, threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        bail!(Parameter, "variance threshold must lie in (0, 1], got {threshold}");
    }
    require_variance(s)?;
    let mut cumulative = 0.0;
    for (m, v) in s.eigenvalues.iter().enumerate() {
        cumulative += v;
        // relative slack so a threshold of exactly 1 is reachable despite summation order
        if cumulative / s.total_variance >= threshold - 1e-12 {
            return Ok(m + 1);
        }
    }
    Ok(s.dim())
}

/// `(Σλ)² / Σλ²`, between 1 and the number of eigenvalues.
pub fn participation_ratio(s: &SpectrumSummary) -> Result<f64> {
    require_variance(s)?;
    let sum_sq: f64 = s.eigenvalues.iter().map(|v| v * v).sum();
    Ok(s.total_variance * s.total_variance / sum_sq)
}
