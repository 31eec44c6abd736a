// SPDX-License-Identifier: MIT OR Apache-2.0

//! A small synthetic "model" export used for end-to-end runs and demos.
//!
//! Every layer is `h_l = tanh(W_l (2 u_{1:d_l} − 1) + c_l)` for a shared latent
//! `u ∈ [0,1]^12`, so layer `l` is a `d_l`-dimensional manifold in `R^D`. The
//! per-layer latent widths rise and fall, giving a hump-shaped dimension
//! profile. Next-token targets are drawn from `softmax(LayerNorm(h_last) W_U)`.
//! A matching encoding dataset drives voxel responses from one layer's
//! word features.

use std::fs;
use std::path::{Path, PathBuf};

use layergeom_core::encoding::lanczos_resample;
use layergeom_core::probe::{layer_norm, NormParams};
use layergeom_core::{Dtype, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::io::{write_atomic, write_matrix};
use crate::manifest::{LayerEntry, RunManifest, SampleMeta};
use crate::report::config::{EncodingSpec, ReportConfig, RunSpec};
use crate::synth::{synth_responses, ResponseSpec};
use crate::words::{stimulus, write_word_times, WordTime};

/// Latent width read by each layer.
pub const LAYER_DIMS: [usize; 8] = [3, 5, 7, 9, 8, 6, 4, 3];
const LATENT: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub n_samples: usize,
    pub dim: usize,
    pub vocab: usize,
    pub n_words: usize,
    pub n_voxels: usize,
    /// Layer whose word features drive the synthetic responses.
    pub response_layer: usize,
    pub response_noise: f64,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            dim: 32,
            vocab: 48,
            n_words: 2400,
            n_voxels: 40,
            response_layer: 3,
            response_noise: 0.5,
            seed: 7,
        }
    }
}

/// Paths of the written fixture.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureFiles {
    pub manifest: PathBuf,
    pub features_manifest: PathBuf,
    pub config: PathBuf,
}

struct Model {
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    norm: NormParams,
    w_u: Matrix,
}

impl Model {
    fn new(spec: &FixtureSpec, rng: &mut ChaCha8Rng) -> Self {
        let d = spec.dim;
        let weights = LAYER_DIMS
            .iter()
            .map(|&k| Matrix::from_fn(k, d, |_, _| 1.2 * rng.sample::<f64, _>(StandardNormal) / (k as f64).sqrt()))
            .collect();
        let biases = LAYER_DIMS.iter().map(|_| (0..d).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect()).collect();
        let gamma = (0..d).map(|_| 1.0 + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        let beta = (0..d).map(|_| 0.05 * rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = NormParams::new(gamma, beta, 1e-5).expect("valid norm parameters");
        let w_u = Matrix::from_fn(d, spec.vocab, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
        Self { weights, biases, norm, w_u }
    }

    fn layer(&self, l: usize, latent: &Matrix) -> Matrix {
        let k = LAYER_DIMS[l];
        let (w, c) = (&self.weights[l], &self.biases[l]);
        Matrix::from_fn(latent.rows(), w.cols(), |i, j| {
            let u = latent.row(i);
            let z: f64 = (0..k).map(|a| (2.0 * u[a] - 1.0) * w.get(a, j)).sum();
            (z + c[j]).tanh()
        })
    }

    fn sample_targets(&self, last: &Matrix, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let (n, d) = last.shape();
        let v = self.w_u.cols();
        let mut normed = vec![0.0; d];
        let mut logits = vec![0.0; v];
        (0..n)
            .map(|i| {
                layer_norm(last.row(i), &self.norm, &mut normed);
                for (t, z) in logits.iter_mut().enumerate() {
                    *z = normed.iter().enumerate().map(|(a, h)| h * self.w_u.get(a, t)).sum();
                }
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
                let mut r = rng.random::<f64>() * weights.iter().sum::<f64>();
                for (t, w) in weights.iter().enumerate() {
                    if r < *w {
                        return t;
                    }
                    r -= w;
                }
                v - 1
            })
            .collect()
    }
}

fn write_layers(dir: &Path, prefix: &str, model: &Model, latent: &Matrix) -> Result<(Vec<LayerEntry>, Vec<Matrix>)> {
    let mut entries = Vec::new();
    let mut layers = Vec::new();
    for l in 0..LAYER_DIMS.len() {
        let h = model.layer(l, latent);
        let name = format!("{prefix}{l:02}.lmrx");
        write_matrix(dir.join(&name), &h, Dtype::F32)?;
        entries.push(LayerEntry { layer_index: l, matrix_path: name });
        layers.push(h);
    }
    Ok((entries, layers))
}

/// Writes the fixture into `dir`: activation manifest with probe inputs, an
/// encoding dataset, and `report_config.json` tying them together.
pub fn write_fixture(dir: impl AsRef<Path>, spec: &FixtureSpec) -> Result<FixtureFiles> {
    let dir = dir.as_ref();
    if spec.dim < 4 || spec.vocab < 2 || spec.n_samples < 16 || spec.n_words < 64 || spec.n_voxels == 0 {
        return Err(Error::Config("fixture sizes are too small".into()));
    }
    if spec.response_layer >= LAYER_DIMS.len() {
        return Err(Error::Config(format!("response layer {} does not exist", spec.response_layer)));
    }
    fs::create_dir_all(dir.join("encoding")).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let model = Model::new(spec, &mut rng);

    let latent = Matrix::from_fn(spec.n_samples, LATENT, |_, _| rng.random::<f64>());
    let (layers, states) = write_layers(dir, "layer_", &model, &latent)?;
    let targets = model.sample_targets(states.last().expect("at least one layer"), &mut rng);
    write_matrix(dir.join("unembedding.lmrx"), &model.w_u, Dtype::F32)?;
    write_matrix(dir.join("norm.lmrx"), &model.norm.to_matrix(), Dtype::F64)?;
    write_matrix(
        dir.join("targets.lmrx"),
        &Matrix::column_vector(targets.iter().map(|&t| t as f64).collect()),
        Dtype::F32,
    )?;
    let manifest = RunManifest {
        model_name: "fixture-8".into(),
        checkpoint_step: None,
        layers,
        sample_meta: SampleMeta { n_contexts: spec.n_samples, context_words: 20, seed: spec.seed },
        unembedding_path: Some("unembedding.lmrx".into()),
        norm_params_path: Some("norm.lmrx".into()),
        target_ids_path: Some("targets.lmrx".into()),
    };
    let manifest_path = dir.join("manifest.json");
    manifest.save(&manifest_path)?;

    let enc_dir = dir.join("encoding");
    let word_latent = Matrix::from_fn(spec.n_words, LATENT, |_, _| rng.random::<f64>());
    let (feature_layers, word_states) = write_layers(&enc_dir, "features_", &model, &word_latent)?;
    let features = RunManifest {
        model_name: "fixture-8-words".into(),
        checkpoint_step: None,
        layers: feature_layers,
        sample_meta: SampleMeta { n_contexts: spec.n_words, context_words: 20, seed: spec.seed },
        unembedding_path: None,
        norm_params_path: None,
        target_ids_path: None,
    };
    let features_path = enc_dir.join("features.json");
    features.save(&features_path)?;

    let mut t = 1.0;
    let words: Vec<WordTime> = (0..spec.n_words)
        .map(|i| {
            let w = WordTime { word_index: i, onset_seconds: t };
            t += 0.25 + 0.3 * rng.random::<f64>();
            w
        })
        .collect();
    write_word_times(enc_dir.join("words.csv"), &words)?;
    let encoding = EncodingSpec::with_defaults(
        "encoding/features.json".into(),
        "encoding/words.csv".into(),
        "encoding/responses.lmrx".into(),
    );
    let n_trs = (t / encoding.tr).ceil() as usize + encoding.trim_end;
    let stim = stimulus(&words, &word_states[spec.response_layer])?;
    let scan = lanczos_resample(&stim, encoding.tr, n_trs, encoding.lobes)?.values;
    let responses = synth_responses(
        &scan,
        &ResponseSpec {
            n_voxels: spec.n_voxels,
            lags: vec![(1, 0.3), (2, 1.0), (3, 0.6), (4, 0.2)],
            noise: spec.response_noise,
            seed: spec.seed.wrapping_add(1),
        },
    )?;
    write_matrix(enc_dir.join("responses.lmrx"), &responses, Dtype::F32)?;

    let mut config = ReportConfig::for_manifests(&[]);
    config.runs = vec![RunSpec::Full { manifest: "manifest.json".into(), encoding: Some(encoding) }];
    config.seed = spec.seed;
    let config_path = dir.join("report_config.json");
    let text = serde_json::to_string_pretty(&config).expect("config serializes");
    write_atomic(&config_path, text.as_bytes())?;
    Ok(FixtureFiles { manifest: manifest_path, features_manifest: features_path, config: config_path })
}
