// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line interface. Exit codes: 0 success, 2 invalid input, 3 numerical failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use layergeom_core::intrinsic_dim::{analyze, normalize_id, IdConfig, ScaleChoice};
use layergeom_core::linear_dim::{covariance_spectrum, participation_ratio, pca_effective_dim};
use layergeom_core::probe::surprisal_profile;
use layergeom_core::similarity::cka_matrix;
use layergeom_core::{Dtype, Matrix};
use serde_json::{json, Value};

use crate::encode::{fit_layer, mask_from_matrix, EncodingData};
use crate::error::{Error, Result};
use crate::fixture::{write_fixture, FixtureSpec};
use crate::io::{read_matrix, write_atomic, write_container};
use crate::manifest::load_manifest;
use crate::report::config::{EncodingSpec, LogBaseSetting, ReportConfig, ScaleSetting, SurprisalUnits};
use crate::report::{build_report, write_outputs};
use crate::synth::{synth_manifold, ManifoldKind, ManifoldSpec};
use crate::words::read_word_times;

#[derive(Debug, Parser)]
#[command(name = "layergeom", version, about = "Geometry of layer representations: intrinsic and linear dimension, CKA, encoding models, surprisal probes")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Single-threaded run; output is identical to the parallel one.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Write results here instead of stdout.
    #[arg(short, long, global = true)]
    pub output: Option<PathBuf>,
    /// Increase log detail (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[arg(short, long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// GRIDE scale sweep and intrinsic-dimension estimate of one matrix.
    Id(IdArgs),
    /// Participation ratio and PCA dimension of one matrix.
    Lindim(LindimArgs),
    /// Linear CKA between every pair of layers.
    Cka(CkaArgs),
    /// Cross-validated voxelwise ridge encoding per layer.
    Encode(EncodeArgs),
    /// Affine-probe surprisal profile of a manifest.
    Probe(ProbeArgs),
    /// Synthetic data.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Full report over one or more manifests.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ScaleArgs {
    /// Largest neighbor rank computed.
    #[arg(long, default_value_t = 128)]
    pub k_max: usize,
    /// Plateau window length.
    #[arg(long, default_value_t = 3, conflicts_with_all = ["k", "preset"])]
    pub window: usize,
    /// Use this scale instead of the plateau.
    #[arg(long)]
    pub k: Option<usize>,
    /// Use a named preset scale.
    #[arg(long, conflicts_with = "k")]
    pub preset: Option<String>,
    #[arg(long, value_enum, default_value_t = LogBaseArg::E)]
    pub log_base: LogBaseArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LogBaseArg {
    E,
    #[value(name = "2")]
    Two,
    #[value(name = "10")]
    Ten,
}

impl LogBaseArg {
    fn setting(self) -> LogBaseSetting {
        match self {
            LogBaseArg::E => LogBaseSetting::Natural,
            LogBaseArg::Two => LogBaseSetting::Two,
            LogBaseArg::Ten => LogBaseSetting::Ten,
        }
    }
}

impl ScaleArgs {
    fn setting(&self) -> ScaleSetting {
        match (&self.k, &self.preset) {
            (Some(k), _) => ScaleSetting::Fixed(*k),
            (None, Some(p)) => ScaleSetting::Preset(p.clone()),
            (None, None) => ScaleSetting::Plateau(self.window),
        }
    }
}

#[derive(Debug, Args)]
pub struct IdArgs {
    /// Matrix file (LMRX or .npy).
    pub matrix: PathBuf,
    #[command(flatten)]
    pub scale: ScaleArgs,
}

#[derive(Debug, Args)]
pub struct LindimArgs {
    pub matrix: PathBuf,
    /// Cumulative variance fraction for the PCA dimension.
    #[arg(long, default_value_t = 0.99)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct CkaArgs {
    /// A manifest, or two or more matrix files.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Manifest of per-layer word-feature matrices.
    #[arg(long)]
    pub features: PathBuf,
    /// CSV with `word_index,onset_seconds`.
    #[arg(long)]
    pub words: PathBuf,
    /// `T × V` response matrix.
    #[arg(long)]
    pub responses: PathBuf,
    #[arg(long)]
    pub voxel_mask: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    pub tr: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 3, 4])]
    pub delays: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub trim_start: usize,
    #[arg(long, default_value_t = 5)]
    pub trim_end: usize,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 20)]
    pub chunk_trs: usize,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long)]
    pub bits: bool,
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Point cloud with known intrinsic dimension, written as LMRX.
    Manifold {
        #[arg(long, value_parser = parse_kind)]
        kind: ManifoldKind,
        #[arg(short = 'd', long)]
        dim: usize,
        /// Ambient dimension.
        #[arg(short = 'D', long)]
        ambient: usize,
        #[arg(short = 'n', long)]
        n: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long)]
        f32: bool,
    },
    /// Eight-layer fixture export with probe inputs, an encoding dataset and a report config.
    Fixture {
        dir: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n: usize,
    },
}

fn parse_kind(s: &str) -> std::result::Result<ManifoldKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report configuration (JSON).
    #[arg(long, conflicts_with = "manifests")]
    pub config: Option<PathBuf>,
    /// Manifests analyzed with default settings.
    pub manifests: Vec<PathBuf>,
    /// Directory for report.json, CSV tables and SVG figures.
    #[arg(long, default_value = "report")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub n_perm: Option<usize>,
    #[arg(long)]
    pub no_csv: bool,
    #[arg(long)]
    pub no_svg: bool,
}

/// Sets up logging and the thread pool, runs the command, and maps the
/// outcome to an exit code.
pub fn main_with(cli: Cli) -> i32 {
    let level = match (cli.global.quiet, cli.global.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    let threads = if cli.global.deterministic { Some(1) } else { cli.global.threads };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Id(a) => emit(g, id_command(a)?),
        Command::Lindim(a) => emit(g, lindim_command(a)?),
        Command::Cka(a) => emit(g, cka_command(a)?),
        Command::Encode(a) => emit(g, encode_command(a, g.seed)?),
        Command::Probe(a) => emit(g, probe_command(a, g.seed)?),
        Command::Synth(s) => synth_command(s, g),
        Command::Report(a) => report_command(a, g),
    }
}

/// Result of a subcommand in both output formats.
pub struct Output {
    pub json: Value,
    pub csv: String,
}

fn emit(g: &GlobalArgs, out: Output) -> Result<()> {
    let text = match g.format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&out.json).expect("json value serializes");
            s.push('\n');
            s
        }
        Format::Csv => out.csv,
    };
    match &g.output {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn id_command(a: &IdArgs) -> Result<Output> {
    let x = read_matrix(&a.matrix)?;
    let scale = a.scale.setting().choice();
    if let ScaleChoice::Preset(p) = &scale {
        log::info!("using preset scale {p}");
    }
    let analysis = analyze(&x, &IdConfig { k_max: a.scale.k_max, scale })?;
    let est = analysis.estimate();
    let base = a.scale.log_base.setting().base();
    let normalized = match est {
        Some(e) => Some(normalize_id(e.id, x.cols() as f64, base)?),
        None => None,
    };
    let mut csv = String::from("k,id,n_used,log_likelihood,selected\n");
    let mut curve = Vec::new();
    for e in &analysis.curve.entries {
        let selected = analysis.curve.selected_k == Some(e.k);
        match &e.estimate {
            Ok(v) => {
                let _ = writeln!(csv, "{},{},{},{},{selected}", e.k, v.id, v.n_used, v.log_likelihood);
                curve.push(json!({"k": e.k, "id": v.id, "n_used": v.n_used, "log_likelihood": v.log_likelihood}));
            }
            Err(err) => {
                let _ = writeln!(csv, "{},,,,{selected}", e.k);
                curve.push(json!({"k": e.k, "error": err.to_string()}));
            }
        }
    }
    let json = json!({
        "n_points": analysis.n_points,
        "ambient_dim": analysis.ambient_dim,
        "discarded_duplicates": analysis.discarded_duplicates,
        "scale_curve": curve,
        "selected_k": analysis.curve.selected_k,
        "id": est.map(|e| e.id),
        "id_normalized": normalized,
        "log_base": base.name(),
    });
    Ok(Output { json, csv })
}

fn lindim_command(a: &LindimArgs) -> Result<Output> {
    let x = read_matrix(&a.matrix)?;
    let s = covariance_spectrum(&x)?;
    let pr = participation_ratio(&s)?;
    let pca = pca_effective_dim(&s, a.threshold)?;
    let mut csv = String::from("index,eigenvalue\n");
    for (i, v) in s.eigenvalues().iter().enumerate() {
        let _ = writeln!(csv, "{i},{v}");
    }
    let json = json!({
        "participation_ratio": pr,
        "pca_dim": pca,
        "threshold": a.threshold,
        "total_variance": s.total_variance(),
        "eigenvalues": s.eigenvalues(),
    });
    Ok(Output { json, csv })
}

fn is_json(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn cka_command(a: &CkaArgs) -> Result<Output> {
    let (labels, layers): (Vec<String>, Vec<Matrix>) = if a.inputs.len() == 1 && is_json(&a.inputs[0]) {
        let m = load_manifest(&a.inputs[0])?;
        (m.layer_indices().iter().map(|l| l.to_string()).collect(), m.read_layers()?)
    } else if a.inputs.len() >= 2 {
        let layers = a.inputs.iter().map(read_matrix).collect::<Result<_>>()?;
        (a.inputs.iter().map(|p| p.display().to_string()).collect(), layers)
    } else {
        return Err(Error::Config("cka needs a manifest or at least two matrices".into()));
    };
    let m = cka_matrix(&layers)?;
    let rows: Vec<Vec<Option<f64>>> = m.rows().map(<[_]>::to_vec).collect();
    let mut csv = String::from("layer");
    for l in &labels {
        let _ = write!(csv, ",{l}");
    }
    csv.push('\n');
    for (l, row) in labels.iter().zip(&rows) {
        csv.push_str(l);
        for v in row {
            let _ = write!(csv, ",{}", opt(*v));
        }
        csv.push('\n');
    }
    Ok(Output { json: json!({"layers": labels, "cka": rows}), csv })
}

fn encode_command(a: &EncodeArgs, seed: u64) -> Result<Output> {
    let features = load_manifest(&a.features)?;
    let responses = read_matrix(&a.responses)?;
    let voxel_mask = match &a.voxel_mask {
        Some(p) => Some(mask_from_matrix(&read_matrix(p)?, responses.cols())?),
        None => None,
    };
    let data = EncodingData { words: read_word_times(&a.words)?, responses, voxel_mask };
    let mut spec = EncodingSpec::with_defaults(String::new(), String::new(), String::new());
    spec.tr = a.tr;
    spec.delays = a.delays.clone();
    spec.trim_start = a.trim_start;
    spec.trim_end = a.trim_end;
    spec.n_folds = a.folds;
    spec.chunk_trs = a.chunk_trs;
    let mut layers = Vec::new();
    let mut csv = String::from("layer_index,voxel,r,alpha\n");
    for (index, f) in features.layer_indices().into_iter().zip(features.read_layers()?) {
        log::info!("fitting layer {index}");
        let scores = fit_layer(&f, &data, &spec, seed)?.cv_scores;
        for (v, (r, alpha)) in scores.per_voxel.iter().zip(&scores.alpha_per_voxel).enumerate() {
            let _ = writeln!(csv, "{index},{v},{r},{alpha}");
        }
        let masked = data.voxel_mask.as_ref().map(|m| {
            let kept: Vec<f64> = scores.per_voxel.iter().zip(m).filter(|(_, &k)| k).map(|(r, _)| *r).collect();
            kept.iter().sum::<f64>() / kept.len().max(1) as f64
        });
        layers.push(json!({
            "layer_index": index,
            "mean_r": scores.mean(),
            "masked_mean_r": masked,
            "per_voxel": scores.per_voxel,
            "alpha_per_voxel": scores.alpha_per_voxel,
            "degenerate_voxels": scores.degenerate_voxels,
        }));
    }
    Ok(Output { json: json!({"layers": layers}), csv })
}

fn probe_command(a: &ProbeArgs, seed: u64) -> Result<Output> {
    let m = load_manifest(&a.manifest)?;
    let (inputs, fallback) = m.probe_inputs(m.read_layers()?)?;
    let mut p = surprisal_profile(&inputs, a.train_fraction, seed)?;
    let units = if a.bits { SurprisalUnits::Bits } else { SurprisalUnits::Nats };
    if units == SurprisalUnits::Bits {
        p = p.map(|v| v / std::f64::consts::LN_2);
    }
    let mut csv = String::from("layer_index,surprisal\n");
    for (l, v) in p.layer_indices.iter().zip(&p.values) {
        let _ = writeln!(csv, "{l},{}", opt(*v));
    }
    let json = json!({
        "units": if a.bits { "bits" } else { "nats" },
        "train_fraction": a.train_fraction,
        "norm_fallback": fallback,
        "layer_indices": p.layer_indices,
        "surprisal": p.values,
    });
    Ok(Output { json, csv })
}

fn synth_command(s: &SynthCommand, g: &GlobalArgs) -> Result<()> {
    match s {
        SynthCommand::Manifold { kind, dim, ambient, n, noise, f32 } => {
            let out = g.output.as_ref().ok_or_else(|| Error::Config("synth manifold needs --output".into()))?;
            let spec = ManifoldSpec { kind: *kind, d: *dim, ambient: *ambient, n: *n, noise: *noise, seed: g.seed };
            let c = synth_manifold(&spec)?;
            let c = if *f32 { layergeom_core::MatrixContainer::from_f32(&c.to_matrix())? } else { c };
            debug_assert!(matches!(c.dtype(), Dtype::F32 | Dtype::F64));
            write_container(out, &c)
        }
        SynthCommand::Fixture { dir, n } => {
            let files = write_fixture(dir, &FixtureSpec { n_samples: *n, seed: g.seed, ..FixtureSpec::default() })?;
            println!("{}", files.config.display());
            Ok(())
        }
    }
}

fn report_command(a: &ReportArgs, g: &GlobalArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => ReportConfig::load(p)?,
        None if a.manifests.is_empty() => {
            return Err(Error::Config("report needs --config or at least one manifest".into()));
        }
        None => {
            let names: Vec<String> = a.manifests.iter().map(|p| p.display().to_string()).collect();
            let mut c = ReportConfig::for_manifests(&names);
            c.seed = g.seed;
            c
        }
    };
    if let Some(n) = a.n_perm {
        config.permutation.n_perm = n;
    }
    config.outputs.csv &= !a.no_csv;
    config.outputs.svg &= !a.no_svg;
    let report = build_report(&config)?;
    let out_dir = g.output.clone().unwrap_or_else(|| a.out_dir.clone());
    let written = write_outputs(&report, &out_dir, &config.outputs)?;
    fs::metadata(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    for p in written {
        log::info!("wrote {}", p.display());
    }
    println!("{}", out_dir.join("report.json").display());
    Ok(())
}
