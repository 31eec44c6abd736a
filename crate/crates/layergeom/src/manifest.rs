// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run manifests: the JSON sidecar that lists one activation matrix per layer
//! plus the optional probe inputs of a model (checkpoint).
//!
//! ```json
//! {
//!   "model_name": "tiny-8",
//!   "checkpoint_step": 1000,
//!   "layers": [{"layer_index": 0, "matrix_path": "layer_00.lmrx"}],
//!   "sample_meta": {"n_contexts": 2000, "context_words": 20, "seed": 0},
//!   "unembedding_path": "unembedding.lmrx",
//!   "norm_params_path": "norm.lmrx",
//!   "target_ids_path": "targets.lmrx"
//! }
//! ```
//!
//! Relative paths are resolved against the manifest's directory. Unknown keys
//! are ignored so exporters can record extra provenance.

use std::fs;
use std::path::{Path, PathBuf};

use layergeom_core::probe::{targets_from_matrix, NormParams, ProbeInputs, Unembedding};
use layergeom_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_header, read_matrix};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub layer_index: usize,
    pub matrix_path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub n_contexts: usize,
    pub context_words: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_step: Option<u64>,
    pub layers: Vec<LayerEntry>,
    pub sample_meta: SampleMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unembedding_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm_params_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_ids_path: Option<String>,
}

/// A manifest that passed validation, with its shapes and base directory.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedManifest {
    pub manifest: RunManifest,
    pub path: PathBuf,
    pub base_dir: PathBuf,
    pub n_samples: usize,
    /// Width of the final layer, which the probe inputs must match.
    pub dim: usize,
    /// Width of every layer, in manifest order.
    pub dims: Vec<usize>,
}

impl RunManifest {
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| Error::Json { path: path.to_path_buf(), source })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn layer_indices(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.layer_index).collect()
    }

    /// Writes the manifest as pretty JSON.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(path.as_ref(), self.to_json().as_bytes())
    }
}

/// Reads a manifest and checks every invariant, including the shapes of the
/// referenced files (headers only).
pub fn load_manifest(path: impl AsRef<Path>) -> Result<LoadedManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest = RunManifest::from_json(&text, path)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    validate(manifest, path.to_path_buf(), base_dir)
}

fn validate(manifest: RunManifest, path: PathBuf, base_dir: PathBuf) -> Result<LoadedManifest> {
    let bad = |msg: String| Error::Manifest(format!("{}: {msg}", path.display()));
    if manifest.layers.is_empty() {
        return Err(bad("no layers listed".into()));
    }
    if let Some(w) = manifest.layers.windows(2).find(|w| w[1].layer_index <= w[0].layer_index) {
        return Err(bad(format!(
            "layer indices must be strictly increasing, found {} after {}",
            w[1].layer_index, w[0].layer_index
        )));
    }
    let resolve = |p: &str| base_dir.join(p);
    let mut n_rows: Option<usize> = None;
    let mut dims = Vec::with_capacity(manifest.layers.len());
    for entry in &manifest.layers {
        let file = resolve(&entry.matrix_path);
        if !file.is_file() {
            return Err(bad(format!("layer {} file {} does not exist", entry.layer_index, file.display())));
        }
        let h = read_header(&file)?;
        match n_rows {
            None => n_rows = Some(h.rows),
            Some(n) if h.rows != n => {
                return Err(bad(format!(
                    "layer {} has {} rows, first layer has {n} (row counts must agree)",
                    entry.layer_index, h.rows
                )));
            }
            Some(_) => {}
        }
        dims.push(h.cols);
    }
    let n = n_rows.unwrap();
    let d = *dims.last().unwrap();
    let optional = |p: &Option<String>, what: &str| -> Result<Option<(usize, usize)>> {
        let Some(p) = p else { return Ok(None) };
        let file = resolve(p);
        if !file.is_file() {
            return Err(bad(format!("{what} file {} does not exist", file.display())));
        }
        let h = read_header(&file)?;
        Ok(Some((h.rows, h.cols)))
    };
    if let Some((r, _)) = optional(&manifest.unembedding_path, "unembedding")? {
        if r != d {
            return Err(bad(format!("unembedding has {r} rows, final layer has dimension {d}")));
        }
    }
    if let Some((r, c)) = optional(&manifest.norm_params_path, "norm parameter")? {
        if (r, c) != (3, d) {
            return Err(bad(format!("norm parameters are {r}x{c}, expected 3x{d}")));
        }
    }
    if let Some((r, c)) = optional(&manifest.target_ids_path, "target id")? {
        if (r, c) != (n, 1) {
            return Err(bad(format!("target ids are {r}x{c}, expected {n}x1")));
        }
    }
    Ok(LoadedManifest { manifest, path, base_dir, n_samples: n, dim: d, dims })
}

impl LoadedManifest {
    pub fn resolve(&self, p: &str) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn layer_indices(&self) -> Vec<usize> {
        self.manifest.layer_indices()
    }

    pub fn read_layers(&self) -> Result<Vec<Matrix>> {
        self.manifest.layers.iter().map(|l| read_matrix(self.resolve(&l.matrix_path))).collect()
    }

    pub fn has_probe_inputs(&self) -> bool {
        self.manifest.unembedding_path.is_some() && self.manifest.target_ids_path.is_some()
    }

    /// Probe inputs for a surprisal profile. Missing norm parameters fall back
    /// to plain standardization; the returned flag reports that fallback.
    pub fn probe_inputs(&self, layers: Vec<Matrix>) -> Result<(ProbeInputs, bool)> {
        let (Some(u), Some(t)) = (&self.manifest.unembedding_path, &self.manifest.target_ids_path) else {
            return Err(Error::Manifest(format!(
                "{}: surprisal needs unembedding_path and target_ids_path",
                self.path.display()
            )));
        };
        let unembedding = Unembedding::new(read_matrix(self.resolve(u))?).map_err(|e| Error::from(e).in_file(self.resolve(u)))?;
        let targets = targets_from_matrix(&read_matrix(self.resolve(t))?).map_err(|e| Error::from(e).in_file(self.resolve(t)))?;
        if let Some(bad) = targets.iter().find(|&&id| id >= unembedding.vocab_size()) {
            return Err(Error::Manifest(format!(
                "{}: target id {bad} is outside the vocabulary of {}",
                self.path.display(),
                unembedding.vocab_size()
            )));
        }
        let (norm, fallback) = match &self.manifest.norm_params_path {
            Some(p) => (NormParams::from_matrix(&read_matrix(self.resolve(p))?).map_err(|e| Error::from(e).in_file(self.resolve(p)))?, false),
            None => {
                log::warn!("{}: no norm parameters; using plain standardization", self.path.display());
                (NormParams::standard(self.dim), true)
            }
        };
        Ok((ProbeInputs { layer_indices: self.layer_indices(), layers, norm, unembedding, targets }, fallback))
    }
}
