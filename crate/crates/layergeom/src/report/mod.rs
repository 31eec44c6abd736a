// SPDX-License-Identifier: MIT OR Apache-2.0

//! Multi-run reports: per-layer geometry, profiles, CKA, surprisal, encoding,
//! phase landmarks, repeat summaries and checkpoint-series correlations.
//!
//! The JSON layout is described in `docs/report-schema.md` and
//! `docs/report.schema.json`; [`SCHEMA_VERSION`] changes with it.

pub mod config;
mod render;

use std::collections::BTreeMap;

use layergeom_core::encoding::EncodingScores;
use layergeom_core::intrinsic_dim::{analyze, normalize_id, IdAnalysis, IdConfig, RepeatSummary, ScaleSelection};
use layergeom_core::linear_dim::{covariance_spectrum, participation_ratio, pca_effective_dim};
use layergeom_core::probe::surprisal_profile;
use layergeom_core::similarity::cka_matrix;
use layergeom_core::stats::{
    detect_phase_transition, pooled_correlation, profile_correlation, voxelwise_id_correlation, LayerProfile,
    PhaseConfig,
};
use layergeom_core::Matrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use render::{render_csv, render_svgs, write_outputs};

use crate::encode::{fit_layer, mask_from_matrix, EncodingData};
use crate::error::{Error, Result};
use crate::io::read_matrix;
use crate::manifest::{load_manifest, LoadedManifest};
use crate::words::read_word_times;
use config::{EncodingSpec, ReportConfig, SurprisalUnits};

pub const SCHEMA_VERSION: &str = "1.0.0";

/// Fewest layers for which phase landmarks are reported.
pub const MIN_PHASE_LAYERS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub schema_version: String,
    pub generator: Generator,
    pub settings: Settings,
    pub runs: Vec<RunReport>,
    pub repeat_groups: Vec<RepeatGroup>,
    pub checkpoint_series: Vec<CheckpointSeries>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub name: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,
    pub k_max: usize,
    pub scale: String,
    pub log_base: String,
    pub pca_threshold: f64,
    pub n_perm: usize,
    pub probe_train_fraction: f64,
    pub surprisal_units: String,
    pub encoding_cv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub manifest: String,
    pub model_name: String,
    pub checkpoint_step: Option<u64>,
    pub n_samples: usize,
    pub hidden_dim: usize,
    pub layer_indices: Vec<usize>,
    pub layers: Vec<LayerReport>,
    pub profiles: Vec<Profile>,
    pub cka: Option<Cka>,
    pub surprisal: Option<SurprisalInfo>,
    pub encoding: Option<EncodingReport>,
    pub phase: PhaseSection,
    pub errors: Vec<SectionError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerReport {
    pub layer_index: usize,
    pub dim: usize,
    pub discarded_duplicates: usize,
    pub scale_curve: Vec<ScalePoint>,
    pub selected_k: Option<usize>,
    pub selection: Option<String>,
    pub id: Option<f64>,
    pub id_normalized: Option<f64>,
    pub participation_ratio: Option<f64>,
    pub pca_dim: Option<usize>,
    pub total_variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalePoint {
    pub k: usize,
    pub id: Option<f64>,
    pub n_used: Option<usize>,
    pub log_likelihood: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub metric: String,
    pub layer_indices: Vec<usize>,
    pub values: Vec<Option<f64>>,
}

impl Profile {
    fn from_layer_profile(p: &LayerProfile) -> Self {
        Self { metric: p.metric_name.clone(), layer_indices: p.layer_indices.clone(), values: p.values.clone() }
    }

    pub fn to_layer_profile(&self) -> Result<LayerProfile> {
        Ok(LayerProfile::new(self.metric.clone(), self.layer_indices.clone(), self.values.clone())?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cka {
    pub layer_indices: Vec<usize>,
    pub values: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurprisalInfo {
    pub units: String,
    pub train_fraction: f64,
    /// No norm parameters were exported; plain standardization was used.
    pub norm_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodingReport {
    pub n_trs_used: usize,
    pub n_voxels: usize,
    pub uncovered_trs: usize,
    pub layers: Vec<EncodingLayer>,
    pub voxelwise_id_correlation: Option<VoxelCorrelationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodingLayer {
    pub layer_index: usize,
    pub mean_r: f64,
    pub per_voxel: Vec<f64>,
    pub alpha_per_voxel: Vec<f64>,
    pub degenerate_voxels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoxelCorrelationReport {
    pub per_voxel: Vec<Option<f64>>,
    pub mean: f64,
    pub masked_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSection {
    /// `ok`, `insufficient_layers` or `unavailable`.
    pub status: String,
    pub report: Option<Phase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub peak_id_layer: usize,
    pub peak_encoding_layer: Option<usize>,
    pub surprisal_drop_layer: Option<usize>,
    pub correlation_id_encoding: Option<f64>,
    pub permutation_p: Option<f64>,
    pub flat_id_profile: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionError {
    pub section: String,
    pub layer_index: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepeatGroup {
    pub model_name: String,
    pub checkpoint_step: Option<u64>,
    /// Positions in `runs`.
    pub runs: Vec<usize>,
    pub layer_indices: Vec<usize>,
    pub metrics: Vec<RepeatMetric>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepeatMetric {
    pub metric: String,
    pub mean: Vec<Option<f64>>,
    /// Sample standard deviation across repeats; 0 for a single run.
    pub std: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointSeries {
    pub model_name: String,
    pub checkpoints: Vec<u64>,
    /// Correlation between the mean dimension profiles of each pair of checkpoints.
    pub id_profile_correlation: Vec<Vec<Option<f64>>>,
    /// Dimension against encoding performance over every (checkpoint, layer) pair.
    pub pooled_id_encoding: Option<f64>,
}

/// Everything computed for one layer before assembly.
struct LayerResult {
    id: Result<IdAnalysis>,
    spectrum: Result<(f64, usize, f64)>,
}

fn selection_label(s: &ScaleSelection) -> String {
    match s {
        ScaleSelection::Plateau { window } => format!("plateau(window={window})"),
        ScaleSelection::Override => "override".into(),
        ScaleSelection::Preset(name) => format!("preset:{name}"),
    }
}

fn scale_label(config: &ReportConfig) -> String {
    match &config.id.scale {
        config::ScaleSetting::Plateau(w) => format!("plateau(window={w})"),
        config::ScaleSetting::Fixed(k) => format!("fixed(k={k})"),
        config::ScaleSetting::Preset(p) => format!("preset:{p}"),
    }
}

/// Validates every manifest up front, then computes each section. Failures
/// inside a section are recorded on the run and the report is still returned.
pub fn build_report(config: &ReportConfig) -> Result<Report> {
    config.check()?;
    let loaded: Vec<LoadedManifest> =
        config.runs.iter().map(|r| load_manifest(config.resolve(r.manifest()))).collect::<Result<_>>()?;
    let mut runs = Vec::with_capacity(loaded.len());
    for (spec, manifest) in config.runs.iter().zip(&loaded) {
        log::info!("analyzing {} ({} layers)", manifest.path.display(), manifest.manifest.layers.len());
        runs.push(build_run(config, spec.manifest(), manifest, spec.encoding())?);
    }
    let repeat_groups = repeat_groups(&runs);
    let checkpoint_series = checkpoint_series(&runs, &repeat_groups);
    Ok(Report {
        schema_version: SCHEMA_VERSION.into(),
        generator: Generator { name: env!("CARGO_PKG_NAME").into(), version: env!("CARGO_PKG_VERSION").into() },
        settings: Settings {
            seed: config.seed,
            k_max: config.id.k_max,
            scale: scale_label(config),
            log_base: config.id.log_base.base().name().into(),
            pca_threshold: config.pca_threshold,
            n_perm: config.permutation.n_perm,
            probe_train_fraction: config.probe.train_fraction,
            surprisal_units: units_name(config.probe.units).into(),
            encoding_cv: "chunked k-fold ridge, per-voxel alpha by mean held-out correlation".into(),
        },
        runs,
        repeat_groups,
        checkpoint_series,
    })
}

fn units_name(u: SurprisalUnits) -> &'static str {
    match u {
        SurprisalUnits::Nats => "nats",
        SurprisalUnits::Bits => "bits",
    }
}

fn layer_result(x: &Matrix, config: &ReportConfig) -> LayerResult {
    let id_config = IdConfig { k_max: config.id.k_max, scale: config.id.scale.choice() };
    let id = analyze(x, &id_config).map_err(Error::from);
    let spectrum = covariance_spectrum(x)
        .and_then(|s| Ok((participation_ratio(&s)?, pca_effective_dim(&s, config.pca_threshold)?, s.total_variance())))
        .map_err(Error::from);
    LayerResult { id, spectrum }
}

fn build_run(
    config: &ReportConfig,
    label: &str,
    manifest: &LoadedManifest,
    encoding: Option<&EncodingSpec>,
) -> Result<RunReport> {
    let indices = manifest.layer_indices();
    let layers = manifest.read_layers()?;
    let dim = manifest.dim;
    let mut errors = Vec::new();
    let mut record = |section: &str, layer_index: Option<usize>, e: &Error| {
        log::warn!("{section} failed{}: {e}", layer_index.map(|l| format!(" for layer {l}")).unwrap_or_default());
        errors.push(SectionError { section: section.into(), layer_index, message: e.to_string() });
    };

    let results: Vec<LayerResult> = layers.par_iter().map(|x| layer_result(x, config)).collect();
    let mut layer_reports = Vec::with_capacity(layers.len());
    for ((&index, r), &layer_dim) in indices.iter().zip(&results).zip(&manifest.dims) {
        let mut lr = LayerReport {
            layer_index: index,
            dim: layer_dim,
            discarded_duplicates: 0,
            scale_curve: Vec::new(),
            selected_k: None,
            selection: None,
            id: None,
            id_normalized: None,
            participation_ratio: None,
            pca_dim: None,
            total_variance: None,
        };
        match &r.id {
            Ok(a) => {
                lr.discarded_duplicates = a.discarded_duplicates;
                lr.scale_curve = a
                    .curve
                    .entries
                    .iter()
                    .map(|e| match &e.estimate {
                        Ok(est) => ScalePoint {
                            k: e.k,
                            id: Some(est.id),
                            n_used: Some(est.n_used),
                            log_likelihood: Some(est.log_likelihood),
                            error: None,
                        },
                        Err(err) => {
                            ScalePoint { k: e.k, id: None, n_used: None, log_likelihood: None, error: Some(err.to_string()) }
                        }
                    })
                    .collect();
                lr.selected_k = a.curve.selected_k;
                lr.selection = a.curve.selection.as_ref().map(selection_label);
                lr.id = a.estimate().map(|e| e.id);
                if let Some(id) = lr.id {
                    match normalize_id(id, layer_dim as f64, config.id.log_base.base()) {
                        Ok(v) => lr.id_normalized = Some(v),
                        Err(e) => record("id_normalized", Some(index), &e.into()),
                    }
                }
            }
            Err(e) => record("id", Some(index), e),
        }
        match &r.spectrum {
            Ok((pr, pca, total)) => {
                lr.participation_ratio = Some(*pr);
                lr.pca_dim = Some(*pca);
                lr.total_variance = Some(*total);
            }
            Err(e) => record("linear_dim", Some(index), e),
        }
        layer_reports.push(lr);
    }

    let profile = |name: &str, f: &dyn Fn(&LayerReport) -> Option<f64>| {
        LayerProfile::new(name, indices.clone(), layer_reports.iter().map(f).collect())
    };
    let id_profile = profile("id", &|l| l.id)?;
    let mut profiles = vec![
        id_profile.clone(),
        profile("id_normalized", &|l| l.id_normalized)?,
        profile("participation_ratio", &|l| l.participation_ratio)?,
        profile("pca_dim", &|l| l.pca_dim.map(|d| d as f64))?,
    ];

    let cka = match cka_matrix(&layers) {
        Ok(m) => Some(Cka { layer_indices: indices.clone(), values: m.rows().map(<[_]>::to_vec).collect() }),
        Err(e) => {
            record("cka", None, &e.into());
            None
        }
    };

    let mut surprisal = None;
    let mut surprisal_profile_opt = None;
    if config.probe.enabled && manifest.has_probe_inputs() {
        let computed = manifest.probe_inputs(layers.clone()).and_then(|(inputs, fallback)| {
            let p = surprisal_profile(&inputs, config.probe.train_fraction, config.seed)?;
            Ok((p, fallback))
        });
        match computed {
            Ok((p, fallback)) => {
                let p = match config.probe.units {
                    SurprisalUnits::Nats => p,
                    SurprisalUnits::Bits => p.map(|v| v / std::f64::consts::LN_2),
                };
                surprisal = Some(SurprisalInfo {
                    units: units_name(config.probe.units).into(),
                    train_fraction: config.probe.train_fraction,
                    norm_fallback: fallback,
                });
                profiles.push(p.clone());
                surprisal_profile_opt = Some(p);
            }
            Err(e) => record("surprisal", None, &e),
        }
    }

    let mut encoding_report = None;
    let mut encoding_profile = None;
    if let Some(spec) = encoding {
        match run_encoding(config, manifest, spec, &id_profile) {
            Ok((report, profile)) => {
                profiles.push(profile.clone());
                encoding_profile = Some(profile);
                encoding_report = Some(report);
            }
            Err(e) => record("encoding", None, &e),
        }
    }

    let phase = if id_profile.observed().count() < MIN_PHASE_LAYERS {
        PhaseSection { status: "insufficient_layers".into(), report: None }
    } else {
        let phase_config = PhaseConfig { n_perm: config.permutation.n_perm, seed: config.seed };
        match detect_phase_transition(&id_profile, surprisal_profile_opt.as_ref(), encoding_profile.as_ref(), &phase_config) {
            Ok(p) => PhaseSection {
                status: "ok".into(),
                report: Some(Phase {
                    peak_id_layer: p.peak_id_layer,
                    peak_encoding_layer: p.peak_encoding_layer,
                    surprisal_drop_layer: p.surprisal_drop_layer,
                    correlation_id_encoding: p.correlation_id_encoding,
                    permutation_p: p.permutation_p,
                    flat_id_profile: p.flat_id_profile,
                }),
            },
            Err(e) => {
                record("phase", None, &e.into());
                PhaseSection { status: "unavailable".into(), report: None }
            }
        }
    };

    Ok(RunReport {
        manifest: label.into(),
        model_name: manifest.manifest.model_name.clone(),
        checkpoint_step: manifest.manifest.checkpoint_step,
        n_samples: manifest.n_samples,
        hidden_dim: dim,
        layer_indices: indices,
        layers: layer_reports,
        profiles: profiles.iter().map(Profile::from_layer_profile).collect(),
        cka,
        surprisal,
        encoding: encoding_report,
        phase,
        errors,
    })
}

fn run_encoding(
    config: &ReportConfig,
    manifest: &LoadedManifest,
    spec: &EncodingSpec,
    id_profile: &LayerProfile,
) -> Result<(EncodingReport, LayerProfile)> {
    let features = load_manifest(config.resolve(&spec.features_manifest))?;
    if features.layer_indices() != manifest.layer_indices() {
        return Err(Error::Config(format!(
            "feature manifest {} lists layers {:?}, the run lists {:?}",
            spec.features_manifest,
            features.layer_indices(),
            manifest.layer_indices()
        )));
    }
    let responses = read_matrix(config.resolve(&spec.responses_path))?;
    let voxel_mask = match &spec.voxel_mask_path {
        Some(p) => Some(mask_from_matrix(&read_matrix(config.resolve(p))?, responses.cols())?),
        None => None,
    };
    let data = EncodingData { words: read_word_times(config.resolve(&spec.word_times_path))?, responses, voxel_mask };
    let feature_layers = features.read_layers()?;
    let (_, uncovered) = crate::encode::design_matrix(&feature_layers[0], &data, spec)?;
    let fits: Vec<Result<EncodingScores>> = feature_layers
        .par_iter()
        .zip(manifest.layer_indices())
        .map(|(f, index)| Ok(fit_layer(f, &data, spec, config.seed)?.cv_scores.with_layer(index)))
        .collect();
    let scores: Vec<EncodingScores> = fits.into_iter().collect::<Result<_>>()?;
    let profile = LayerProfile::new(
        "encoding",
        manifest.layer_indices(),
        scores.iter().map(|s| Some(s.mean())).collect(),
    )?;
    let voxelwise = match voxelwise_id_correlation(&scores, id_profile, data.voxel_mask.as_deref()) {
        Ok(v) => Some(VoxelCorrelationReport { per_voxel: v.per_voxel, mean: v.mean, masked_mean: v.masked_mean }),
        Err(e) => {
            log::warn!("voxelwise dimension correlation unavailable: {e}");
            None
        }
    };
    let report = EncodingReport {
        n_trs_used: data.n_trs() - spec.trim_start - spec.trim_end,
        n_voxels: data.n_voxels(),
        uncovered_trs: uncovered,
        layers: scores
            .iter()
            .map(|s| EncodingLayer {
                layer_index: s.layer_index.unwrap_or_default(),
                mean_r: s.mean(),
                per_voxel: s.per_voxel.clone(),
                alpha_per_voxel: s.alpha_per_voxel.clone(),
                degenerate_voxels: s.degenerate_voxels.clone(),
            })
            .collect(),
        voxelwise_id_correlation: voxelwise,
    };
    Ok((report, profile))
}

const REPEAT_METRICS: [&str; 4] = ["id", "id_normalized", "participation_ratio", "pca_dim"];

/// Runs sharing `(model_name, checkpoint_step)` are repeats of one measurement.
fn repeat_groups(runs: &[RunReport]) -> Vec<RepeatGroup> {
    let mut keyed: BTreeMap<(String, Option<u64>), Vec<usize>> = BTreeMap::new();
    for (i, r) in runs.iter().enumerate() {
        keyed.entry((r.model_name.clone(), r.checkpoint_step)).or_default().push(i);
    }
    let mut groups = Vec::new();
    for ((model_name, checkpoint_step), members) in keyed {
        let layer_indices = runs[members[0]].layer_indices.clone();
        let (members, skipped): (Vec<usize>, Vec<usize>) =
            members.into_iter().partition(|&i| runs[i].layer_indices == layer_indices);
        for i in skipped {
            log::warn!("{} lists different layers than its repeats and is left out of the summary", runs[i].manifest);
        }
        let metrics = REPEAT_METRICS
            .iter()
            .map(|&metric| {
                let (mut mean, mut std) = (Vec::new(), Vec::new());
                for pos in 0..layer_indices.len() {
                    let vals: Option<Vec<f64>> = members
                        .iter()
                        .map(|&i| runs[i].profiles.iter().find(|p| p.metric == metric).and_then(|p| p.values[pos]))
                        .collect();
                    let summary = vals.as_deref().and_then(RepeatSummary::from_values);
                    mean.push(summary.map(|s| s.mean));
                    std.push(summary.map(|s| s.std));
                }
                RepeatMetric { metric: metric.into(), mean, std }
            })
            .collect();
        groups.push(RepeatGroup { model_name, checkpoint_step, runs: members, layer_indices, metrics });
    }
    groups
}

fn group_profile(g: &RepeatGroup, metric: &str) -> Option<LayerProfile> {
    let m = g.metrics.iter().find(|m| m.metric == metric)?;
    LayerProfile::new(metric, g.layer_indices.clone(), m.mean.clone()).ok()
}

fn mean_encoding_profile(g: &RepeatGroup, runs: &[RunReport]) -> Option<LayerProfile> {
    let profiles: Vec<&Profile> =
        g.runs.iter().filter_map(|&i| runs[i].profiles.iter().find(|p| p.metric == "encoding")).collect();
    if profiles.len() != g.runs.len() || profiles.is_empty() {
        return None;
    }
    let values = (0..g.layer_indices.len())
        .map(|pos| {
            let vals: Option<Vec<f64>> = profiles.iter().map(|p| p.values[pos]).collect();
            vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect();
    LayerProfile::new("encoding", g.layer_indices.clone(), values).ok()
}

fn checkpoint_series(runs: &[RunReport], groups: &[RepeatGroup]) -> Vec<CheckpointSeries> {
    let mut by_model: BTreeMap<&str, Vec<&RepeatGroup>> = BTreeMap::new();
    for g in groups.iter().filter(|g| g.checkpoint_step.is_some()) {
        by_model.entry(&g.model_name).or_default().push(g);
    }
    let mut out = Vec::new();
    for (model, mut members) in by_model {
        if members.len() < 2 {
            continue;
        }
        members.sort_by_key(|g| g.checkpoint_step);
        let ids: Vec<Option<LayerProfile>> = members.iter().map(|g| group_profile(g, "id")).collect();
        let id_profile_correlation = ids
            .iter()
            .map(|a| {
                ids.iter()
                    .map(|b| match (a, b) {
                        (Some(a), Some(b)) => profile_correlation(a, b).ok(),
                        _ => None,
                    })
                    .collect()
            })
            .collect();
        let pairs: Vec<(LayerProfile, LayerProfile)> = members
            .iter()
            .zip(&ids)
            .filter_map(|(g, id)| Some((id.clone()?, mean_encoding_profile(g, runs)?)))
            .collect();
        let pooled_id_encoding = if pairs.len() == members.len() {
            let refs: Vec<(&LayerProfile, &LayerProfile)> = pairs.iter().map(|(a, b)| (a, b)).collect();
            pooled_correlation(&refs).ok()
        } else {
            None
        };
        out.push(CheckpointSeries {
            model_name: model.into(),
            checkpoints: members.iter().filter_map(|g| g.checkpoint_step).collect(),
            id_profile_correlation,
            pooled_id_encoding,
        });
    }
    out
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
