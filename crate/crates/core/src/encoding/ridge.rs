// SPDX-License-Identifier: MIT OR Apache-2.0

//! Voxelwise ridge regression with chunked cross-validation.
//!
//! Each fold is solved once through the SVD of its standardized training
//! design, after which every alpha on the grid costs only a rescaling of the
//! singular values. Folds are built from contiguous chunks of TRs so that
//! held-out data is not autocorrelated with training data at chunk interiors.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{bail, Result};
use crate::matrix::Matrix;
use crate::stats::pearson;

/// Held-out prediction correlation for every voxel of one layer's encoding model.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingScores {
    pub per_voxel: Vec<f64>,
    pub alpha_per_voxel: Vec<f64>,
    pub layer_index: Option<usize>,
    /// Voxels scored 0 because the target or the prediction had zero variance.
    pub degenerate_voxels: Vec<usize>,
}

impl EncodingScores {
    pub fn n_voxels(&self) -> usize {
        self.per_voxel.len()
    }

    pub fn mean(&self) -> f64 {
        self.per_voxel.iter().sum::<f64>() / self.per_voxel.len().max(1) as f64
    }

    pub fn with_layer(mut self, layer_index: usize) -> Self {
        self.layer_index = Some(layer_index);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeConfig {
    pub alphas: Vec<f64>,
    pub n_folds: usize,
    pub chunk_trs: usize,
    pub seed: u64,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        Self { alphas: log_grid(1.0, 1e6, 10), n_folds: 5, chunk_trs: 20, seed: 0 }
    }
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (libm::log10(lo), libm::log10(hi));
    (0..n).map(|i| libm::pow(10.0, a + (b - a) * i as f64 / (n - 1) as f64)).collect()
}

/// Fold index of every row: contiguous chunks, shuffled with `seed`, dealt round-robin.
pub fn fold_assignment(n_rows: usize, n_folds: usize, chunk_trs: usize, seed: u64) -> Result<Vec<usize>> {
    if n_folds < 2 {
        bail!(Parameter, "need at least 2 folds, got {n_folds}");
    }
    if chunk_trs == 0 {
        bail!(Parameter, "chunk length must be positive");
    }
    let n_chunks = n_rows.div_ceil(chunk_trs);
    if n_chunks < n_folds {
        bail!(Parameter, "{n_rows} rows make {n_chunks} chunks of {chunk_trs}, fewer than {n_folds} folds");
    }
    let mut order: Vec<usize> = (0..n_chunks).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut chunk_fold = vec![0; n_chunks];
    for (pos, &chunk) in order.iter().enumerate() {
        chunk_fold[chunk] = pos % n_folds;
    }
    Ok((0..n_rows).map(|r| chunk_fold[r / chunk_trs]).collect())
}

/// Column means and standard deviations (population); zero deviations become 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut std = Vec::with_capacity(x.ncols());
        for c in x.column_iter() {
            let m = c.sum() / n;
            let var = c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            let s = libm::sqrt(var);
            mean.push(m);
            std.push(if s > 0.0 { s } else { 1.0 });
        }
        Self { mean, std }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for (j, mut c) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.mean[j], self.std[j]);
            c.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
        out
    }
}

/// Thin SVD of a design, reused across every alpha.
struct SvdSolver {
    u_t_y: DMatrix<f64>,
    v: DMatrix<f64>,
    s: DVector<f64>,
}

impl SvdSolver {
    fn new(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Self> {
        let svd = x.clone().svd(true, true);
        let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
            bail!(Numerical, "SVD of the design did not converge");
        };
        Ok(Self { u_t_y: u.tr_mul(y), v: v_t.transpose(), s: svd.singular_values })
    }

    /// `V diag(s / (s² + α))`, the map from `Uᵀ Y` to weights.
    fn shrunk_v(&self, alpha: f64) -> DMatrix<f64> {
        let mut m = self.v.clone();
        for (j, mut c) in m.column_iter_mut().enumerate() {
            let s = self.s[j];
            c *= s / (s * s + alpha);
        }
        m
    }

    fn weights(&self, alpha: f64) -> DMatrix<f64> {
        self.shrunk_v(alpha) * &self.u_t_y
    }
}

/// Ridge weights for each alpha, solved directly on `x` and `y` without standardization.
pub fn ridge_path(x: &Matrix, y: &Matrix, alphas: &[f64]) -> Result<Vec<Matrix>> {
    if x.rows() != y.rows() {
        bail!(Shape, "design has {} rows, responses have {}", x.rows(), y.rows());
    }
    check_alphas(alphas)?;
    let solver = SvdSolver::new(&x.to_dmatrix(), &y.to_dmatrix())?;
    Ok(alphas.iter().map(|&a| Matrix::from_dmatrix(&solver.weights(a))).collect())
}

fn check_alphas(alphas: &[f64]) -> Result<()> {
    if alphas.is_empty() {
        bail!(Parameter, "alpha grid is empty");
    }
    if alphas.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
        bail!(Parameter, "alphas must be positive and finite");
    }
    Ok(())
}

/// A fitted encoding model. Weights act on standardized features and predict standardized responses.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub weights: Matrix,
    pub x_scaling: Standardizer,
    pub y_scaling: Standardizer,
    /// Held-out scores at each voxel's selected alpha.
    pub cv_scores: EncodingScores,
    /// Mean held-out correlation, alphas × voxels.
    pub cv_curve: Matrix,
}

impl RidgeFit {
    /// Predicted responses in the original units of `y`.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.weights.rows() {
            bail!(Shape, "model expects {} features, got {}", self.weights.rows(), x.cols());
        }
        let z = self.x_scaling.apply(&x.to_dmatrix());
        let mut pred = z * self.weights.to_dmatrix();
        for (j, mut c) in pred.column_iter_mut().enumerate() {
            let (m, s) = (self.y_scaling.mean[j], self.y_scaling.std[j]);
            c.iter_mut().for_each(|v| *v = *v * s + m);
        }
        Ok(Matrix::from_dmatrix(&pred))
    }

    /// Held-out voxelwise correlation of the refitted model on new data.
    pub fn score(&self, x_test: &Matrix, y_test: &Matrix) -> Result<EncodingScores> {
        let pred = self.predict(x_test)?;
        if pred.shape() != y_test.shape() {
            bail!(Shape, "predictions {:?} and responses {:?} differ in shape", pred.shape(), y_test.shape());
        }
        Ok(correlate_columns(&pred, y_test))
    }
}

fn correlate_columns(pred: &Matrix, y: &Matrix) -> EncodingScores {
    let mut per_voxel = Vec::with_capacity(y.cols());
    let mut degenerate = Vec::new();
    for j in 0..y.cols() {
        match pearson(&pred.column(j), &y.column(j)) {
            Some(r) => per_voxel.push(r),
            None => {
                per_voxel.push(0.0);
                degenerate.push(j);
            }
        }
    }
    EncodingScores { per_voxel, alpha_per_voxel: Vec::new(), layer_index: None, degenerate_voxels: degenerate }
}

/// Cross-validated ridge: per-voxel alpha by mean held-out Pearson r, then a refit on all rows.
pub fn ridge_fit_cv(x: &Matrix, y: &Matrix, config: &RidgeConfig) -> Result<RidgeFit> {
    let (t, p) = x.shape();
    let v = y.cols();
    if y.rows() != t {
        bail!(Shape, "design has {t} rows, responses have {}", y.rows());
    }
    if p == 0 || v == 0 {
        bail!(Shape, "design and responses need at least one column");
    }
    check_alphas(&config.alphas)?;
    let folds = fold_assignment(t, config.n_folds, config.chunk_trs, config.seed)?;
    let xd = x.to_dmatrix();
    let yd = y.to_dmatrix();
    let n_alpha = config.alphas.len();

    let constant_voxels: Vec<usize> =
        (0..v).filter(|&j| yd.column(j).iter().all(|&e| e == yd[(0, j)])).collect();
    if !constant_voxels.is_empty() {
        log::warn!("{} voxels have constant responses and score 0", constant_voxels.len());
    }

    let mut curve = DMatrix::<f64>::zeros(n_alpha, v);
    for fold in 0..config.n_folds {
        let train: Vec<usize> = (0..t).filter(|&r| folds[r] != fold).collect();
        let val: Vec<usize> = (0..t).filter(|&r| folds[r] == fold).collect();
        let (xtr, ytr) = (xd.select_rows(&train), yd.select_rows(&train));
        let (xval, yval) = (xd.select_rows(&val), yd.select_rows(&val));
        let xs = Standardizer::fit(&xtr);
        let ys = Standardizer::fit(&ytr);
        let solver = SvdSolver::new(&xs.apply(&xtr), &ys.apply(&ytr))?;
        let xval_z = xs.apply(&xval);
        for (ai, &alpha) in config.alphas.iter().enumerate() {
            let pred = (&xval_z * solver.shrunk_v(alpha)) * &solver.u_t_y;
            for j in 0..v {
                let r = pearson(pred.column(j).as_slice(), yval.column(j).as_slice()).unwrap_or(0.0);
                curve[(ai, j)] += r;
            }
        }
    }
    curve /= config.n_folds as f64;

    let mut best_alpha = vec![0usize; v];
    for j in 0..v {
        let mut best = 0;
        for ai in 1..n_alpha {
            if curve[(ai, j)] > curve[(best, j)] {
                best = ai;
            }
        }
        best_alpha[j] = best;
    }

    let xs = Standardizer::fit(&xd);
    let ys = Standardizer::fit(&yd);
    let solver = SvdSolver::new(&xs.apply(&xd), &ys.apply(&yd))?;
    let mut weights = DMatrix::<f64>::zeros(p, v);
    for ai in 0..n_alpha {
        let cols: Vec<usize> = (0..v).filter(|&j| best_alpha[j] == ai && !constant_voxels.contains(&j)).collect();
        if cols.is_empty() {
            continue;
        }
        let shrunk = solver.shrunk_v(config.alphas[ai]);
        for &j in &cols {
            weights.set_column(j, &(&shrunk * solver.u_t_y.column(j)));
        }
    }

    let mut per_voxel: Vec<f64> = (0..v).map(|j| curve[(best_alpha[j], j)]).collect();
    for &j in &constant_voxels {
        per_voxel[j] = 0.0;
    }
    let cv_scores = EncodingScores {
        per_voxel,
        alpha_per_voxel: best_alpha.iter().map(|&ai| config.alphas[ai]).collect(),
        layer_index: None,
        degenerate_voxels: constant_voxels,
    };
    Ok(RidgeFit {
        weights: Matrix::from_dmatrix(&weights),
        x_scaling: xs,
        y_scaling: ys,
        cv_scores,
        cv_curve: Matrix::from_dmatrix(&curve),
    })
}

/// Pearson correlation per voxel between `x_test · weights` and `y_test`.
///
/// Voxels whose prediction or target has zero variance score 0 and are flagged.
pub fn score_voxelwise(weights: &Matrix, x_test: &Matrix, y_test: &Matrix) -> Result<EncodingScores> {
    if x_test.cols() != weights.rows() || x_test.rows() != y_test.rows() || weights.cols() != y_test.cols() {
        bail!(
            Shape,
            "incompatible shapes: X {:?}, W {:?}, Y {:?}",
            x_test.shape(),
            weights.shape(),
            y_test.shape()
        );
    }
    Ok(correlate_columns(&x_test.matmul(weights)?, y_test))
}
