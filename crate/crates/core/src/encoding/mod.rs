// SPDX-License-Identifier: MIT OR Apache-2.0

//! Encoding models: word-level features to scan-grid designs, and
//! cross-validated ridge regression scored by held-out voxel correlations.

mod resample;
mod ridge;

pub use resample::{
    add_fir_delays, lanczos_kernel, lanczos_resample, sinc, trim_story, Resampled, StimulusFeatures,
};
pub use ridge::{
    fold_assignment, log_grid, ridge_fit_cv, ridge_path, score_voxelwise, EncodingScores, RidgeConfig,
    RidgeFit, Standardizer,
};

/// Hemodynamic lags, in TRs, added as FIR delay blocks.
pub const DEFAULT_DELAYS: [usize; 4] = [1, 2, 3, 4];
