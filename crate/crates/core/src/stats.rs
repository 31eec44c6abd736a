// SPDX-License-Identifier: MIT OR Apache-2.0

//! Layer profiles and the statistics that relate them: product-moment
//! correlation, label-permutation significance, voxelwise correlation against
//! a dimension profile, and argmax-style phase detection.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoding::EncodingScores;
use crate::error::{bail, Result};

/// Pearson correlation; `None` when either side has zero variance or lengths differ.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / libm::sqrt(saa * sbb)).clamp(-1.0, 1.0))
}

/// Provenance of a profile.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProfileMeta {
    pub model: String,
    pub checkpoint_step: Option<u64>,
    /// Number of repeats averaged into each value.
    pub repeats: usize,
    /// Across-repeat standard deviation per layer, when repeats > 1.
    pub std: Option<Vec<f64>>,
}

/// One scalar per layer; masked layers hold `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerProfile {
    pub metric_name: String,
    pub layer_indices: Vec<usize>,
    pub values: Vec<Option<f64>>,
    pub meta: ProfileMeta,
}

impl LayerProfile {
    pub fn new(metric_name: impl Into<String>, layer_indices: Vec<usize>, values: Vec<Option<f64>>) -> Result<Self> {
        if layer_indices.len() != values.len() {
            bail!(Shape, "{} layer indices for {} values", layer_indices.len(), values.len());
        }
        if layer_indices.windows(2).any(|w| w[1] <= w[0]) {
            bail!(Parameter, "layer indices must be strictly increasing");
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            bail!(Parameter, "unmasked profile values must be finite");
        }
        Ok(Self { metric_name: metric_name.into(), layer_indices, values, meta: ProfileMeta::default() })
    }

    /// Fully observed profile over layers `0..values.len()`.
    pub fn dense(metric_name: impl Into<String>, values: &[f64]) -> Result<Self> {
        Self::new(metric_name, (0..values.len()).collect(), values.iter().copied().map(Some).collect())
    }

    pub fn with_meta(mut self, meta: ProfileMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value_at(&self, layer: usize) -> Option<f64> {
        self.layer_indices.binary_search(&layer).ok().and_then(|p| self.values[p])
    }

    /// `(layer, value)` for unmasked layers.
    pub fn observed(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.layer_indices.iter().zip(&self.values).filter_map(|(&l, v)| v.map(|v| (l, v)))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { values: self.values.iter().map(|v| v.map(&f)).collect(), ..self.clone() }
    }
}

/// Values of both profiles at their commonly unmasked layers.
fn paired(a: &LayerProfile, b: &LayerProfile) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (layer, x) in a.observed() {
        if let Some(y) = b.value_at(layer) {
            xs.push(x);
            ys.push(y);
        }
    }
    if xs.len() < 3 {
        bail!(Parameter, "profiles {:?} and {:?} share only {} unmasked layers (need 3)", a.metric_name, b.metric_name, xs.len());
    }
    Ok((xs, ys))
}

/// Product-moment correlation over the layers both profiles observe.
pub fn profile_correlation(a: &LayerProfile, b: &LayerProfile) -> Result<f64> {
    let (xs, ys) = paired(a, b)?;
    match pearson(&xs, &ys) {
        Some(r) => Ok(r),
        None => bail!(Degenerate, "a profile has zero variance over the shared layers"),
    }
}

/// Two-sided permutation p-value for the profile correlation.
///
/// Shuffles the layer labels of `b` `n_perm` times and returns
/// `(1 + #{|r_perm| ≥ |r_obs|}) / (n_perm + 1)`, which is never zero.
pub fn permutation_test(a: &LayerProfile, b: &LayerProfile, n_perm: usize, seed: u64) -> Result<f64> {
    let (xs, mut ys) = paired(a, b)?;
    let Some(observed) = pearson(&xs, &ys) else {
        bail!(Degenerate, "a profile has zero variance over the shared layers");
    };
    if n_perm == 0 {
        log::warn!("permutation test with zero permutations; p fixed at 1");
        return Ok(1.0);
    }
    let threshold = observed.abs() - 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut extreme = 0usize;
    for _ in 0..n_perm {
        ys.shuffle(&mut rng);
        // shuffling preserves variance, so pearson cannot fail here
        if pearson(&xs, &ys).is_some_and(|r| r.abs() >= threshold) {
            extreme += 1;
        }
    }
    Ok((1 + extreme) as f64 / (n_perm + 1) as f64)
}

/// Per-voxel correlation across layers between encoding scores and a profile.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelCorrelation {
    /// `None` for voxels whose scores do not vary across layers.
    pub per_voxel: Vec<Option<f64>>,
    /// Mean over all voxels with a defined correlation.
    pub mean: f64,
    /// Mean over voxels selected by a mask, when one was given.
    pub masked_mean: Option<f64>,
}

/// Correlates, for every voxel, its score-by-layer profile with `id_profile`.
pub fn voxelwise_id_correlation(
    scores: &[EncodingScores],
    id_profile: &LayerProfile,
    voxel_mask: Option<&[bool]>,
) -> Result<VoxelCorrelation> {
    if scores.len() != id_profile.len() {
        bail!(Shape, "{} score sets for a {}-layer profile", scores.len(), id_profile.len());
    }
    let Some(first) = scores.first() else {
        bail!(Parameter, "no encoding scores given");
    };
    let v = first.n_voxels();
    if let Some(bad) = scores.iter().position(|s| s.n_voxels() != v) {
        bail!(Shape, "layer {bad} scores {} voxels, layer 0 scores {v}", scores[bad].n_voxels());
    }
    if let Some(mask) = voxel_mask {
        if mask.len() != v {
            bail!(Shape, "voxel mask has {} entries for {v} voxels", mask.len());
        }
    }
    let rows: Vec<usize> = (0..id_profile.len()).filter(|&i| id_profile.values[i].is_some()).collect();
    if rows.len() < 3 {
        bail!(Parameter, "profile has only {} unmasked layers (need 3)", rows.len());
    }
    let ids: Vec<f64> = rows.iter().map(|&i| id_profile.values[i].unwrap()).collect();
    if pearson(&ids, &ids).is_none() {
        bail!(Degenerate, "dimension profile has zero variance");
    }
    let mut series = Vec::with_capacity(rows.len());
    let per_voxel: Vec<Option<f64>> = (0..v)
        .map(|j| {
            series.clear();
            series.extend(rows.iter().map(|&i| scores[i].per_voxel[j]));
            pearson(&series, &ids)
        })
        .collect();
    let mean_of = |keep: &dyn Fn(usize) -> bool| -> Option<f64> {
        let vals: Vec<f64> = per_voxel.iter().enumerate().filter(|(j, _)| keep(*j)).filter_map(|(_, r)| *r).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let Some(mean) = mean_of(&|_| true) else {
        bail!(Degenerate, "no voxel has scores that vary across layers");
    };
    let masked_mean = voxel_mask.and_then(|m| mean_of(&|j| m[j]));
    Ok(VoxelCorrelation { per_voxel, mean, masked_mean })
}

/// Layer-level landmarks of a layer profile: where dimension peaks, where
/// surprisal drops and how dimension tracks encoding performance.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseReport {
    pub peak_id_layer: usize,
    pub peak_encoding_layer: Option<usize>,
    pub surprisal_drop_layer: Option<usize>,
    pub correlation_id_encoding: Option<f64>,
    pub permutation_p: Option<f64>,
    /// Every unmasked dimension value is the same.
    pub flat_id_profile: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseConfig {
    pub n_perm: usize,
    pub seed: u64,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self { n_perm: 10_000, seed: 0 }
    }
}

/// Layer of the first maximum among unmasked values.
fn argmax_layer(p: &LayerProfile) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (layer, v) in p.observed() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((layer, v));
        }
    }
    best.map(|b| b.0)
}

/// Layer whose forward difference `s[i+1] - s[i]` is most negative (adjacent unmasked layers only).
fn steepest_drop_layer(p: &LayerProfile) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for i in 0..p.len().saturating_sub(1) {
        if let (Some(a), Some(b)) = (p.values[i], p.values[i + 1]) {
            let diff = b - a;
            if best.is_none_or(|(_, d)| diff < d) {
                best = Some((p.layer_indices[i], diff));
            }
        }
    }
    best.map(|b| b.0)
}

/// Peaks of dimension and encoding, steepest surprisal drop, and the
/// dimension/encoding correlation with its permutation p-value.
pub fn detect_phase_transition(
    id_profile: &LayerProfile,
    surprisal: Option<&LayerProfile>,
    encoding: Option<&LayerProfile>,
    config: &PhaseConfig,
) -> Result<PhaseReport> {
    let Some(peak_id_layer) = argmax_layer(id_profile) else {
        bail!(Parameter, "dimension profile has no unmasked layers");
    };
    let mut observed = id_profile.observed().map(|(_, v)| v);
    let first = observed.next().unwrap();
    let flat_id_profile = observed.all(|v| v == first);
    if flat_id_profile {
        log::warn!("dimension profile is flat; peak defaults to the earliest layer");
    }
    let (mut correlation, mut p) = (None, None);
    if let Some(enc) = encoding {
        match profile_correlation(id_profile, enc) {
            Ok(r) => {
                correlation = Some(r);
                p = Some(permutation_test(id_profile, enc, config.n_perm, config.seed)?);
            }
            Err(e) => log::warn!("dimension/encoding correlation unavailable: {e}"),
        }
    }
    Ok(PhaseReport {
        peak_id_layer,
        peak_encoding_layer: encoding.and_then(argmax_layer),
        surprisal_drop_layer: surprisal.and_then(steepest_drop_layer),
        correlation_id_encoding: correlation,
        permutation_p: p,
        flat_id_profile,
    })
}

/// Correlation pooled over every `(series, layer)` pair, e.g. dimension against
/// encoding across all checkpoints of a training run.
pub fn pooled_correlation(pairs: &[(&LayerProfile, &LayerProfile)]) -> Result<f64> {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (a, b) in pairs {
        for (layer, x) in a.observed() {
            if let Some(y) = b.value_at(layer) {
                xs.push(x);
                ys.push(y);
            }
        }
    }
    if xs.len() < 3 {
        bail!(Parameter, "only {} pooled points (need 3)", xs.len());
    }
    match pearson(&xs, &ys) {
        Some(r) => Ok(r),
        None => bail!(Degenerate, "pooled series has zero variance"),
    }
}
