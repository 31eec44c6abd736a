// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};

use layergeom_core::encoding::{log_grid, RidgeConfig, DEFAULT_DELAYS};
use layergeom_core::intrinsic_dim::{LogBase, ScaleChoice};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Report configuration, a JSON document in the same dialect as run manifests.
/// Relative paths are resolved against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    pub runs: Vec<RunSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub id: IdSettings,
    #[serde(default = "default_pca_threshold")]
    pub pca_threshold: f64,
    #[serde(default)]
    pub probe: ProbeSettings,
    #[serde(default)]
    pub permutation: PermutationSettings,
    #[serde(default)]
    pub outputs: OutputSettings,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_pca_threshold() -> f64 {
    0.99
}

/// A manifest path, optionally with an encoding dataset for the same model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RunSpec {
    Manifest(String),
    Full {
        manifest: String,
        #[serde(default)]
        encoding: Option<EncodingSpec>,
    },
}

impl RunSpec {
    pub fn manifest(&self) -> &str {
        match self {
            RunSpec::Manifest(m) | RunSpec::Full { manifest: m, .. } => m,
        }
    }

    pub fn encoding(&self) -> Option<&EncodingSpec> {
        match self {
            RunSpec::Manifest(_) => None,
            RunSpec::Full { encoding, .. } => encoding.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleSetting {
    Plateau(usize),
    Fixed(usize),
    Preset(String),
}

impl Default for ScaleSetting {
    fn default() -> Self {
        ScaleSetting::Plateau(3)
    }
}

impl ScaleSetting {
    pub fn choice(&self) -> ScaleChoice {
        match self {
            ScaleSetting::Plateau(w) => ScaleChoice::Plateau { window: *w },
            ScaleSetting::Fixed(k) => ScaleChoice::Fixed(*k),
            ScaleSetting::Preset(p) => ScaleChoice::Preset(p.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LogBaseSetting {
    #[default]
    Natural,
    Two,
    Ten,
}

impl LogBaseSetting {
    pub fn base(self) -> LogBase {
        match self {
            LogBaseSetting::Natural => LogBase::Natural,
            LogBaseSetting::Two => LogBase::Two,
            LogBaseSetting::Ten => LogBase::Ten,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdSettings {
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default)]
    pub scale: ScaleSetting,
    #[serde(default)]
    pub log_base: LogBaseSetting,
}

fn default_k_max() -> usize {
    128
}

impl Default for IdSettings {
    fn default() -> Self {
        Self { k_max: default_k_max(), scale: ScaleSetting::default(), log_base: LogBaseSetting::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SurprisalUnits {
    #[default]
    Nats,
    Bits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSettings {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub units: SurprisalUnits,
}

fn yes() -> bool {
    true
}

fn default_train_fraction() -> f64 {
    0.8
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self { enabled: true, train_fraction: default_train_fraction(), units: SurprisalUnits::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PermutationSettings {
    #[serde(default = "default_n_perm")]
    pub n_perm: usize,
}

fn default_n_perm() -> usize {
    10_000
}

impl Default for PermutationSettings {
    fn default() -> Self {
        Self { n_perm: default_n_perm() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSettings {
    #[serde(default = "yes")]
    pub csv: bool,
    #[serde(default = "yes")]
    pub svg: bool,
}

impl Default for OutputSettings {
    fn default() -> Self {
        Self { csv: true, svg: true }
    }
}

/// Word-time features of one model, scan responses, and the pipeline settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodingSpec {
    /// Manifest whose layers are `W × F` word-feature matrices, one per layer.
    pub features_manifest: String,
    pub word_times_path: String,
    /// `T × V` responses on the scan grid.
    pub responses_path: String,
    #[serde(default = "default_tr")]
    pub tr: f64,
    #[serde(default = "default_delays")]
    pub delays: Vec<usize>,
    #[serde(default = "default_trim_start")]
    pub trim_start: usize,
    #[serde(default = "default_trim_end")]
    pub trim_end: usize,
    #[serde(default = "default_lobes")]
    pub lobes: usize,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_folds")]
    pub n_folds: usize,
    #[serde(default = "default_chunk")]
    pub chunk_trs: usize,
    /// Optional `V × 1` matrix of 0/1 flags selecting voxels for a second mean.
    #[serde(default)]
    pub voxel_mask_path: Option<String>,
}

fn default_tr() -> f64 {
    2.0
}
fn default_delays() -> Vec<usize> {
    DEFAULT_DELAYS.to_vec()
}
fn default_trim_start() -> usize {
    10
}
fn default_trim_end() -> usize {
    5
}
fn default_lobes() -> usize {
    3
}
fn default_alphas() -> Vec<f64> {
    log_grid(1.0, 1e6, 10)
}
fn default_folds() -> usize {
    5
}
fn default_chunk() -> usize {
    20
}

impl EncodingSpec {
    pub fn with_defaults(features_manifest: String, word_times_path: String, responses_path: String) -> Self {
        Self {
            features_manifest,
            word_times_path,
            responses_path,
            tr: default_tr(),
            delays: default_delays(),
            trim_start: default_trim_start(),
            trim_end: default_trim_end(),
            lobes: default_lobes(),
            alphas: default_alphas(),
            n_folds: default_folds(),
            chunk_trs: default_chunk(),
            voxel_mask_path: None,
        }
    }

    pub fn ridge(&self, seed: u64) -> RidgeConfig {
        RidgeConfig { alphas: self.alphas.clone(), n_folds: self.n_folds, chunk_trs: self.chunk_trs, seed }
    }
}

impl ReportConfig {
    /// Config for a plain list of manifests with every default.
    pub fn for_manifests(manifests: &[String]) -> Self {
        Self {
            runs: manifests.iter().cloned().map(RunSpec::Manifest).collect(),
            seed: 0,
            id: IdSettings::default(),
            pca_threshold: default_pca_threshold(),
            probe: ProbeSettings::default(),
            permutation: PermutationSettings::default(),
            outputs: OutputSettings::default(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: ReportConfig =
            serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.check()?;
        Ok(config)
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn check(&self) -> Result<()> {
        if self.runs.is_empty() {
            return Err(Error::Config("no runs listed".into()));
        }
        if !(self.pca_threshold > 0.0 && self.pca_threshold <= 1.0) {
            return Err(Error::Config(format!("pca_threshold must lie in (0, 1], got {}", self.pca_threshold)));
        }
        if self.id.k_max < 2 {
            return Err(Error::Config("id.k_max must be at least 2".into()));
        }
        if !(self.probe.train_fraction > 0.0 && self.probe.train_fraction < 1.0) {
            return Err(Error::Config("probe.train_fraction must lie in (0, 1)".into()));
        }
        for enc in self.runs.iter().filter_map(RunSpec::encoding) {
            if !(enc.tr > 0.0) {
                return Err(Error::Config("encoding.tr must be positive".into()));
            }
            if enc.delays.is_empty() {
                return Err(Error::Config("encoding.delays is empty".into()));
            }
        }
        Ok(())
    }
}
