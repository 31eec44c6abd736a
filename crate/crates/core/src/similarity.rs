// SPDX-License-Identifier: MIT OR Apache-2.0

//! Linear centered kernel alignment between representations of the same inputs.
//!
//! Computed in feature space, `‖Ycᵀ Xc‖²_F / (‖Xcᵀ Xc‖_F ‖Ycᵀ Yc‖_F)`, which
//! only forms `D × D` cross products and so scales with the number of samples
//! linearly.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{bail, Error, Result};
use crate::matrix::Matrix;
use crate::par;

fn centered_checked(x: &Matrix, which: &str) -> Result<DMatrix<f64>> {
    let c = x.centered();
    if c.frobenius_norm() == 0.0 {
        bail!(Degenerate, "{which} representation is constant across samples");
    }
    Ok(c.to_dmatrix())
}

fn cka_centered(xc: &DMatrix<f64>, yc: &DMatrix<f64>) -> f64 {
    let cross = yc.tr_mul(xc).norm_squared();
    let xx = xc.tr_mul(xc).norm();
    let yy = yc.tr_mul(yc).norm();
    cross / (xx * yy)
}

/// Linear CKA of two representations with the same number of rows.
pub fn linear_cka(x: &Matrix, y: &Matrix) -> Result<f64> {
    if x.rows() != y.rows() {
        bail!(Shape, "representations have {} and {} samples", x.rows(), y.rows());
    }
    if x.rows() < 2 {
        bail!(Parameter, "CKA needs at least 2 samples");
    }
    let xc = centered_checked(x, "first")?;
    let yc = centered_checked(y, "second")?;
    Ok(cka_centered(&xc, &yc))
}

/// Symmetric layer × layer CKA matrix; entries that could not be computed are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct CkaMatrix {
    n_layers: usize,
    values: Vec<Option<f64>>,
}

impl CkaMatrix {
    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn get(&self, a: usize, b: usize) -> Option<f64> {
        self.values[a * self.n_layers + b]
    }

    /// True when at least one entry is masked.
    pub fn has_masked(&self) -> bool {
        self.values.iter().any(Option::is_none)
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Option<f64>]> {
        self.values.chunks_exact(self.n_layers.max(1))
    }
}

/// CKA for every pair of layers (upper triangle computed, then mirrored).
pub fn cka_matrix(layers: &[Matrix]) -> Result<CkaMatrix> {
    let l = layers.len();
    if l == 0 {
        bail!(Parameter, "no layers given");
    }
    let n = layers[0].rows();
    if let Some(bad) = layers.iter().position(|m| m.rows() != n) {
        bail!(Shape, "layer {bad} has {} samples, layer 0 has {n}", layers[bad].rows());
    }
    let centered: Vec<Result<DMatrix<f64>>> =
        par::map(l, |i| if n < 2 { Err(Error::Parameter("CKA needs at least 2 samples".into())) } else { centered_checked(&layers[i], "layer") });
    let pairs: Vec<(usize, usize)> = (0..l).flat_map(|a| (a..l).map(move |b| (a, b))).collect();
    let values = par::map(pairs.len(), |p| {
        let (a, b) = pairs[p];
        match (&centered[a], &centered[b]) {
            (Ok(x), Ok(y)) => Some(cka_centered(x, y)),
            _ => None,
        }
    });
    let mut out = alloc::vec![None; l * l];
    for (&(a, b), v) in pairs.iter().zip(values) {
        out[a * l + b] = v;
        out[b * l + a] = v;
    }
    let result = CkaMatrix { n_layers: l, values: out };
    if result.has_masked() {
        log::warn!("CKA matrix has masked entries for constant layers");
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sample(n: usize, d: usize, salt: u64) -> Matrix {
        // small deterministic pseudo-random fill
        let mut s = salt.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
        Matrix::from_fn(n, d, |_, _| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
    }

    #[test]
    fn self_similarity_is_one() {
        let x = sample(50, 6, 1);
        assert_abs_diff_eq!(linear_cka(&x, &x).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_and_scale_invariant() {
        let x = sample(40, 5, 2);
        let y = sample(40, 3, 3);
        let a = linear_cka(&x, &y).unwrap();
        assert!((a - linear_cka(&y, &x).unwrap()).abs() < 1e-12);
        assert_abs_diff_eq!(a, linear_cka(&x.scaled(7.5), &y).unwrap(), epsilon = 1e-12);
        assert!((0.0..=1.0 + 1e-9).contains(&a));
    }

    #[test]
    fn constant_input_is_an_error() {
        let x = sample(10, 3, 4);
        let c = Matrix::from_fn(10, 3, |_, j| j as f64);
        assert!(linear_cka(&x, &c).unwrap_err().is_numerical());
        assert!(linear_cka(&x, &sample(9, 3, 5)).is_err());
    }

    #[test]
    fn single_layer_matrix() {
        let m = cka_matrix(&[sample(20, 4, 6)]).unwrap();
        assert_eq!(m.n_layers(), 1);
        assert_abs_diff_eq!(m.get(0, 0).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_layers_are_masked() {
        let c = Matrix::from_fn(10, 2, |_, j| j as f64);
        let m = cka_matrix(&[sample(10, 2, 7), c.clone(), c]).unwrap();
        assert!(m.has_masked());
        assert!(m.get(0, 0).is_some());
        assert!(m.get(0, 1).is_none());
        assert!(m.get(2, 1).is_none());
        assert!(m.get(1, 1).is_none());
    }
}
