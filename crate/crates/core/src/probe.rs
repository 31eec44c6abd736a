// SPDX-License-Identifier: MIT OR Apache-2.0

//! Layerwise next-token surprisal through affine probes.
//!
//! A probe maps an intermediate hidden state onto the final-layer state by
//! least squares. The mapped state is then pushed through the model's own
//! output normalization and unembedding, and the surprisal of the true next
//! token is read off the resulting distribution.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{bail, Error, Result};
use crate::matrix::Matrix;
use crate::stats::LayerProfile;

/// Relative ridge jitter on the normal equations, scaled by their trace.
pub const JITTER: f64 = 1e-8;

/// `h ↦ A h + b` fitted from one layer to the final layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineProbe {
    /// `D × D`, applied as `A h` to column vectors.
    pub a: Matrix,
    pub b: Vec<f64>,
    pub layer_index: usize,
    /// Mean squared training error per coordinate.
    pub residual: f64,
}

impl AffineProbe {
    pub fn identity(dim: usize, layer_index: usize) -> Self {
        Self {
            a: Matrix::from_fn(dim, dim, |i, j| if i == j { 1.0 } else { 0.0 }),
            b: alloc::vec![0.0; dim],
            layer_index,
            residual: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// Applies the probe to every row of `h`.
    pub fn apply(&self, h: &Matrix) -> Result<Matrix> {
        if h.cols() != self.dim() {
            bail!(Shape, "probe expects dimension {}, got {}", self.dim(), h.cols());
        }
        let mut out = h.matmul(&self.a.transpose())?;
        for i in 0..out.rows() {
            for (v, b) in out.row_mut(i).iter_mut().zip(&self.b) {
                *v += b;
            }
        }
        Ok(out)
    }
}

/// Output normalization applied before the unembedding.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

impl NormParams {
    pub fn new(gamma: Vec<f64>, beta: Vec<f64>, eps: f64) -> Result<Self> {
        if gamma.len() != beta.len() {
            bail!(Shape, "gamma has {} entries, beta {}", gamma.len(), beta.len());
        }
        if !(eps > 0.0) || !eps.is_finite() {
            bail!(Parameter, "norm eps must be positive, got {eps}");
        }
        Ok(Self { gamma, beta, eps })
    }

    /// Plain standardization, used when a model's own parameters are unavailable.
    pub fn standard(dim: usize) -> Self {
        Self { gamma: alloc::vec![1.0; dim], beta: alloc::vec![0.0; dim], eps: 1e-5 }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// Reads the `3 × D` container layout: gamma row, beta row, then a row filled with eps.
    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        if m.rows() != 3 {
            bail!(Shape, "norm parameter matrix must have 3 rows (gamma, beta, eps), got {}", m.rows());
        }
        Self::new(m.row(0).to_vec(), m.row(1).to_vec(), m.get(2, 0))
    }

    pub fn to_matrix(&self) -> Matrix {
        let d = self.dim();
        Matrix::from_fn(3, d, |i, j| match i {
            0 => self.gamma[j],
            1 => self.beta[j],
            _ => self.eps,
        })
    }
}

/// Layer normalization of one vector into `out`.
pub fn layer_norm(x: &[f64], norm: &NormParams, out: &mut [f64]) {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let inv = 1.0 / libm::sqrt(var + norm.eps);
    for (((o, v), g), b) in out.iter_mut().zip(x).zip(&norm.gamma).zip(&norm.beta) {
        *o = (v - mean) * inv * g + b;
    }
}

/// Unembedding matrix, `D × V`.
#[derive(Debug, Clone, PartialEq)]
pub struct Unembedding {
    w_u: Matrix,
}

impl Unembedding {
    pub fn new(w_u: Matrix) -> Result<Self> {
        if w_u.cols() < 2 {
            bail!(Parameter, "vocabulary must have at least 2 entries, got {}", w_u.cols());
        }
        Ok(Self { w_u })
    }

    pub fn vocab_size(&self) -> usize {
        self.w_u.cols()
    }

    pub fn dim(&self) -> usize {
        self.w_u.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.w_u
    }
}

/// Least-squares `(A, b)` minimizing `Σ ‖A h_t + b − h_T‖²`.
///
/// Solved through the normal equations of the design `[H_t, 1]`, with the
/// intercept eliminated by centering and a ridge of `1e-8 · trace` on the
/// diagonal so rank-deficient inputs stay solvable.
pub fn fit_affine_probe(h_t: &Matrix, h_final: &Matrix, layer_index: usize) -> Result<AffineProbe> {
    let (n, d) = h_t.shape();
    if h_final.shape() != (n, d) {
        bail!(Shape, "layer states {:?} and final states {:?} differ in shape", h_t.shape(), h_final.shape());
    }
    if n == 0 {
        bail!(Parameter, "no samples to fit a probe");
    }
    if n < d + 1 {
        log::warn!("probe for layer {layer_index} fitted on {n} samples for {} parameters per output", d + 1);
    }
    // centering solves the intercept column exactly, so the jitter only touches A
    let mean_t = h_t.column_means();
    let mean_final = h_final.column_means();
    let hc = h_t.centered().to_dmatrix();
    let target = h_final.centered().to_dmatrix();
    let mut gram = hc.tr_mul(&hc);
    let jitter = JITTER * gram.trace();
    for i in 0..d {
        gram[(i, i)] += jitter;
    }
    let rhs = hc.tr_mul(&target);
    let Some(chol) = gram.cholesky() else {
        bail!(Numerical, "normal equations for layer {layer_index} are not positive definite");
    };
    // D × D, holds Aᵀ
    let a_t = chol.solve(&rhs);
    if a_t.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(alloc::format!("probe solve for layer {layer_index} is not finite")));
    }
    let residual = (&hc * &a_t - &target).norm_squared() / (n * d) as f64;
    let b = (0..d)
        .map(|j| mean_final[j] - (0..d).map(|i| a_t[(i, j)] * mean_t[i]).sum::<f64>())
        .collect();
    Ok(AffineProbe {
        a: Matrix::from_fn(d, d, |i, j| a_t[(j, i)]),
        b,
        layer_index,
        residual,
    })
}

/// `−log softmax(logits)[target]` via max-subtracted log-sum-exp.
pub fn token_surprisal(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (max - logits[target]) + libm::log(logits.iter().map(|z| libm::exp(z - max)).sum::<f64>())
}

/// Integral target ids from an `N × 1` float column.
pub fn targets_from_matrix(m: &Matrix) -> Result<Vec<usize>> {
    if m.cols() != 1 {
        bail!(Shape, "targets must be an N x 1 column, got {:?}", m.shape());
    }
    m.as_slice()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v >= 0.0 && libm::trunc(v) == v && v < 9.007_199_254_740_992e15 {
                Ok(v as usize)
            } else {
                Err(Error::Parameter(alloc::format!("target {i} = {v} is not a non-negative integer")))
            }
        })
        .collect()
}

/// Mean surprisal, in nats, of `targets` under `LayerNorm(A h + b) · W_U`.
pub fn layer_surprisal(
    h_t: &Matrix,
    probe: &AffineProbe,
    norm: &NormParams,
    unembedding: &Unembedding,
    targets: &[usize],
) -> Result<f64> {
    let (n, d) = h_t.shape();
    if targets.len() != n {
        bail!(Shape, "{} targets for {n} samples", targets.len());
    }
    if n == 0 {
        bail!(Parameter, "no samples to score");
    }
    if norm.dim() != d || unembedding.dim() != d {
        bail!(Shape, "state dimension {d}, norm {}, unembedding {}", norm.dim(), unembedding.dim());
    }
    let v = unembedding.vocab_size();
    if let Some((i, &t)) = targets.iter().enumerate().find(|(_, &t)| t >= v) {
        bail!(Parameter, "target {t} of sample {i} outside vocabulary of {v}");
    }
    let mapped = probe.apply(h_t)?;
    let mut normed = Matrix::zeros(n, d);
    for i in 0..n {
        layer_norm(mapped.row(i), norm, normed.row_mut(i));
    }
    // fixed summation order per logit: identical unembedding columns give identical logits
    let w_t = unembedding.matrix().transpose();
    let mut logits = alloc::vec![0.0; v];
    let mut total = 0.0;
    for i in 0..n {
        let h = normed.row(i);
        for (z, w) in logits.iter_mut().zip(w_t.iter_rows()) {
            *z = h.iter().zip(w).map(|(a, b)| a * b).sum();
        }
        total += token_surprisal(&logits, targets[i]);
    }
    Ok(total / n as f64)
}

/// Everything needed to compute a surprisal profile.
#[derive(Debug, Clone)]
pub struct ProbeInputs {
    pub layer_indices: Vec<usize>,
    /// One `N × D` state matrix per layer; the last is the final layer.
    pub layers: Vec<Matrix>,
    pub norm: NormParams,
    pub unembedding: Unembedding,
    pub targets: Vec<usize>,
}

/// Seeded split of `0..n` into train and validation indices.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        bail!(Parameter, "train fraction must lie in (0, 1), got {train_fraction}");
    }
    let n_train = libm::round(n as f64 * train_fraction) as usize;
    if n_train == 0 || n_train == n {
        bail!(Parameter, "split of {n} samples at {train_fraction} leaves an empty side");
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val = idx.split_off(n_train);
    Ok((idx, val))
}

/// Validation surprisal per layer; each layer's probe is fitted on the
/// training split against final-layer states, and the final layer uses the identity.
pub fn surprisal_profile(inputs: &ProbeInputs, train_fraction: f64, seed: u64) -> Result<LayerProfile> {
    let Some(last) = inputs.layers.last() else {
        bail!(Parameter, "no layers given");
    };
    if inputs.layer_indices.len() != inputs.layers.len() {
        bail!(Shape, "{} layer indices for {} layers", inputs.layer_indices.len(), inputs.layers.len());
    }
    let (n, d) = last.shape();
    if let Some(bad) = inputs.layers.iter().position(|m| m.shape() != (n, d)) {
        bail!(Shape, "layer {bad} has shape {:?}, final layer {:?}", inputs.layers[bad].shape(), (n, d));
    }
    if inputs.targets.len() != n {
        bail!(Shape, "{} targets for {n} samples", inputs.targets.len());
    }
    let (train, val) = split_indices(n, train_fraction, seed)?;
    let final_train = last.select_rows(&train);
    let final_index = *inputs.layer_indices.last().unwrap();
    let val_targets: Vec<usize> = val.iter().map(|&i| inputs.targets[i]).collect();
    let values = crate::par::map(inputs.layers.len(), |li| -> Result<f64> {
        let layer = &inputs.layers[li];
        let index = inputs.layer_indices[li];
        let probe = if index == final_index {
            AffineProbe::identity(d, index)
        } else {
            fit_affine_probe(&layer.select_rows(&train), &final_train, index)?
        };
        layer_surprisal(&layer.select_rows(&val), &probe, &inputs.norm, &inputs.unembedding, &val_targets)
    });
    let values: Vec<Option<f64>> = values.into_iter().map(|r| r.map(Some)).collect::<Result<_>>()?;
    LayerProfile::new("surprisal", inputs.layer_indices.clone(), values)
}
