// SPDX-License-Identifier: MIT OR Apache-2.0

//! Word features to scan-grid design matrices, and per-layer encoding fits.

use layergeom_core::encoding::{add_fir_delays, lanczos_resample, ridge_fit_cv, trim_story, RidgeFit};
use layergeom_core::Matrix;

use crate::error::{Error, Result};
use crate::report::config::EncodingSpec;
use crate::words::{stimulus, WordTime};

/// Responses and word onsets shared by every layer of a model.
#[derive(Debug, Clone)]
pub struct EncodingData {
    pub words: Vec<WordTime>,
    /// `T × V`, untrimmed.
    pub responses: Matrix,
    pub voxel_mask: Option<Vec<bool>>,
}

impl EncodingData {
    pub fn n_trs(&self) -> usize {
        self.responses.rows()
    }

    pub fn n_voxels(&self) -> usize {
        self.responses.cols()
    }

    pub fn trimmed_responses(&self, spec: &EncodingSpec) -> Result<Matrix> {
        Ok(trim_story(&self.responses, spec.trim_start, spec.trim_end)?)
    }
}

/// Lanczos resampling onto the scan grid, FIR delays, then story trimming.
/// Returns the design and the number of TRs no word reached.
pub fn design_matrix(features: &Matrix, data: &EncodingData, spec: &EncodingSpec) -> Result<(Matrix, usize)> {
    let stim = stimulus(&data.words, features)?;
    let resampled = lanczos_resample(&stim, spec.tr, data.n_trs(), spec.lobes)?;
    let delayed = add_fir_delays(&resampled.values, &spec.delays)?;
    Ok((trim_story(&delayed, spec.trim_start, spec.trim_end)?, resampled.uncovered.len()))
}

/// Cross-validated ridge fit of one layer's features against the responses.
pub fn fit_layer(features: &Matrix, data: &EncodingData, spec: &EncodingSpec, seed: u64) -> Result<RidgeFit> {
    let (x, _) = design_matrix(features, data, spec)?;
    let y = data.trimmed_responses(spec)?;
    Ok(ridge_fit_cv(&x, &y, &spec.ridge(seed))?)
}

/// Interprets a `V × 1` matrix of 0/1 values as a voxel mask.
pub fn mask_from_matrix(m: &Matrix, n_voxels: usize) -> Result<Vec<bool>> {
    if m.shape() != (n_voxels, 1) {
        return Err(Error::Config(format!("voxel mask is {:?}, expected {n_voxels}x1", m.shape())));
    }
    m.as_slice()
        .iter()
        .map(|&v| match v {
            0.0 => Ok(false),
            1.0 => Ok(true),
            other => Err(Error::Config(format!("voxel mask value {other} is not 0 or 1"))),
        })
        .collect()
}
