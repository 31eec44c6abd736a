// SPDX-License-Identifier: MIT OR Apache-2.0

//! Nonlinear intrinsic dimension from nearest-neighbor distance ratios.
//!
//! For a point `i` with sorted neighbor distances `r_{i,1} ≤ r_{i,2} ≤ …`, the
//! ratio `μ_i = r_{i,2k} / r_{i,k}` has, under locally uniform density of
//! dimension `d`, the generalized Pareto density
//!
//! ```text
//! f(μ) = d (μ^d - 1)^(k-1) / (B(k,k) μ^(d(2k-1)+1)),   μ ≥ 1
//! ```
//!
//! GRIDE maximizes the summed log of this density over `d`. At `k = 1` it
//! collapses to `d μ^(-d-1)`, whose maximizer is the TwoNN closed form
//! `n / Σ ln μ_i`.
//!
//! The estimate depends on `k`: small scales see noise, large scales see
//! curvature. [`scale_sweep`] evaluates GRIDE at `k = 1, 2, 4, …` and
//! [`select_scale`] picks the centre of the flattest run of the curve.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::format;

use crate::error::{bail, Error, Result};
use crate::matrix::Matrix;
use crate::neighbors::{filter_degenerate, knn_exact, NeighborTable};
use crate::optimize::brent_maximize;
use crate::par;

/// Lower end of the GRIDE search bracket.
pub const ID_LOWER: f64 = 1e-3;
/// Upper end of the bracket and validity bound, as a multiple of the ambient dimension.
pub const ID_UPPER_FACTOR: f64 = 4.0;
/// Absolute tolerance on the maximizing dimension.
pub const ID_TOLERANCE: f64 = 1e-6;
/// Largest scale ever swept.
pub const MAX_SCALE: usize = 1 << 12;
/// Below this many ratios an estimate is still produced but a warning is logged.
pub const MIN_RECOMMENDED_RATIOS: usize = 10;

/// Neighbor-distance ratios `r_{i,2k} / r_{i,k}` at one scale `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MuRatios {
    k: usize,
    ambient_dim: usize,
    values: Vec<f64>,
    excluded: usize,
}

impl MuRatios {
    /// Wraps externally computed ratios; every value must be finite and ≥ 1.
    pub fn new(k: usize, ambient_dim: usize, values: Vec<f64>) -> Result<Self> {
        if k == 0 {
            bail!(Parameter, "scale k must be at least 1");
        }
        if ambient_dim == 0 {
            bail!(Parameter, "ambient dimension must be at least 1");
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 1.0) || !v.is_finite()) {
            bail!(Parameter, "ratio {v} is not a finite value >= 1");
        }
        Ok(Self { k, ambient_dim, values, excluded: 0 })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Points skipped because `r_{i,k}` was zero.
    pub fn excluded(&self) -> usize {
        self.excluded
    }

    pub fn unit_count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1.0).count()
    }

    /// Largest dimension an estimate may take.
    pub fn id_bound(&self) -> f64 {
        ID_UPPER_FACTOR * self.ambient_dim as f64
    }
}

/// Ratios `μ_{i,2k,k}` for every point of a (degenerate-filtered) table.
pub fn mu_ratios(table: &NeighborTable, k: usize) -> Result<MuRatios> {
    if k == 0 || 2 * k > table.k_max() {
        bail!(Parameter, "scale k={k} needs 2k <= k_max={}", table.k_max());
    }
    let mut values = Vec::with_capacity(table.n_points());
    let mut excluded = 0;
    for d in table.iter() {
        let (rk, r2k) = (d[k - 1], d[2 * k - 1]);
        if rk > 0.0 {
            values.push(r2k / rk);
        } else {
            excluded += 1;
        }
    }
    Ok(MuRatios { k, ambient_dim: table.ambient_dim(), values, excluded })
}

/// A fitted intrinsic dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdEstimate {
    pub id: f64,
    pub k: usize,
    pub n_used: usize,
    pub log_likelihood: f64,
    /// Ratios exactly equal to one among the inputs.
    pub n_unit_ratios: usize,
}

fn check_ratio_count(mu: &MuRatios) -> Result<()> {
    if mu.values.is_empty() {
        bail!(Degenerate, "no ratios at scale k={}", mu.k);
    }
    if mu.values.len() < MIN_RECOMMENDED_RATIOS {
        log::warn!("only {} ratios at scale k={}; estimate is unreliable", mu.values.len(), mu.k);
    }
    let units = mu.unit_count();
    if units * 100 > mu.values.len() {
        log::warn!("{units} of {} ratios at k={} equal 1 (tied neighbor distances)", mu.values.len(), mu.k);
    }
    Ok(())
}

fn check_bound(id: f64, mu: &MuRatios) -> Result<()> {
    if !(id > 0.0) || !id.is_finite() {
        bail!(Numerical, "estimate {id} at k={} is not a positive finite dimension", mu.k);
    }
    if id > mu.id_bound() {
        bail!(
            Numerical,
            "estimate {id} at k={} exceeds bound {} (4x ambient dimension)",
            mu.k,
            mu.id_bound()
        );
    }
    Ok(())
}

/// TwoNN maximum-likelihood dimension `n / Σ ln μ_i` from first/second neighbor ratios.
pub fn estimate_twonn(mu: &MuRatios) -> Result<IdEstimate> {
    if mu.k != 1 {
        bail!(Parameter, "TwoNN needs ratios at k=1, got k={}", mu.k);
    }
    check_ratio_count(mu)?;
    let sum_log: f64 = mu.values.iter().map(|&v| libm::log(v)).sum();
    if sum_log <= 0.0 {
        bail!(Degenerate, "all {} ratios equal 1; dimension is unbounded", mu.values.len());
    }
    let n = mu.values.len() as f64;
    let id = n / sum_log;
    check_bound(id, mu)?;
    Ok(IdEstimate {
        id,
        k: 1,
        n_used: mu.values.len(),
        log_likelihood: n * libm::log(id) - (id + 1.0) * sum_log,
        n_unit_ratios: mu.unit_count(),
    })
}

/// `ln B(k, k)` through log-gamma; the beta function itself underflows long before k = 4096.
pub fn ln_beta_symmetric(k: usize) -> f64 {
    let k = k as f64;
    2.0 * libm::lgamma(k) - libm::lgamma(2.0 * k)
}

/// GRIDE log-likelihood of dimension `d` given pre-computed `ln μ_i` (all > 0 when k > 1).
struct GrideLikelihood {
    k: usize,
    log_mu: Vec<f64>,
    sum_log: f64,
    ln_beta: f64,
}

impl GrideLikelihood {
    fn eval(&self, d: f64) -> f64 {
        let n = self.log_mu.len() as f64;
        let k = self.k as f64;
        let mut tail = 0.0;
        if self.k > 1 {
            // ln(μ^d - 1) = d ln μ + ln(1 - μ^-d), stable for large μ^d
            for &l in &self.log_mu {
                tail += d * l + libm::log(-libm::expm1(-d * l));
            }
        }
        n * (libm::log(d) - self.ln_beta) + (k - 1.0) * tail - (d * (2.0 * k - 1.0) + 1.0) * self.sum_log
    }

    /// First and second derivatives in `d`.
    fn derivatives(&self, d: f64) -> (f64, f64) {
        let n = self.log_mu.len() as f64;
        let k = self.k as f64;
        let (mut g, mut h) = (0.0, 0.0);
        if self.k > 1 {
            for &l in &self.log_mu {
                let q = -libm::expm1(-d * l); // 1 - μ^-d
                g += l / q;
                h += l * l * (1.0 - q) / (q * q);
            }
        }
        (n / d + (k - 1.0) * g - (2.0 * k - 1.0) * self.sum_log, -n / (d * d) - (k - 1.0) * h)
    }

    /// Newton refinement of a bracketed optimum. The function is concave, so
    /// steps are accepted only while they stay small and inside the bracket.
    fn polish(&self, mut d: f64, lo: f64, hi: f64) -> f64 {
        for _ in 0..8 {
            let (g, h) = self.derivatives(d);
            if !(h < 0.0) || !g.is_finite() {
                break;
            }
            let step = -g / h;
            let next = d + step;
            if !(step.abs() < 1e-3 * d.max(1.0)) || next <= lo || next >= hi {
                break;
            }
            d = next;
            if step.abs() <= 1e-14 * d {
                break;
            }
        }
        d
    }
}

/// GRIDE dimension at the scale of `mu`, by bracketed maximization over `(10⁻³, 4D]`.
///
/// At `k > 1` a ratio of exactly one has zero density for every `d`; such
/// ratios are left out of the likelihood (and logged when they exceed 1%).
pub fn estimate_gride(mu: &MuRatios) -> Result<IdEstimate> {
    check_ratio_count(mu)?;
    let units = mu.unit_count();
    if units == mu.values.len() {
        bail!(Degenerate, "all {} ratios at k={} equal 1", units, mu.k);
    }
    let log_mu: Vec<f64> = if mu.k == 1 {
        mu.values.iter().map(|&v| libm::log(v)).collect()
    } else {
        mu.values.iter().filter(|&&v| v > 1.0).map(|&v| libm::log(v)).collect()
    };
    let lik = GrideLikelihood {
        k: mu.k,
        sum_log: log_mu.iter().sum(),
        ln_beta: ln_beta_symmetric(mu.k),
        log_mu,
    };
    let hi = mu.id_bound();
    let max = brent_maximize(|d| lik.eval(d), ID_LOWER, hi, ID_TOLERANCE * 1e-2, 500)?;
    let id = lik.polish(max.x, ID_LOWER, hi);
    check_bound(id, mu)?;
    Ok(IdEstimate {
        id,
        k: mu.k,
        n_used: lik.log_mu.len(),
        log_likelihood: lik.eval(id),
        n_unit_ratios: units,
    })
}

/// GRIDE log-likelihood at an arbitrary `d`, using the same ratio policy as [`estimate_gride`].
pub fn gride_log_likelihood(mu: &MuRatios, d: f64) -> f64 {
    let log_mu: Vec<f64> = mu
        .values
        .iter()
        .filter(|&&v| mu.k == 1 || v > 1.0)
        .map(|&v| libm::log(v))
        .collect();
    GrideLikelihood { k: mu.k, sum_log: log_mu.iter().sum(), ln_beta: ln_beta_symmetric(mu.k), log_mu }
        .eval(d)
}

/// One point of a scale curve. Failed estimates stay in the curve.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleEntry {
    pub k: usize,
    pub estimate: core::result::Result<IdEstimate, Error>,
}

impl ScaleEntry {
    pub fn id(&self) -> Option<f64> {
        self.estimate.as_ref().ok().map(|e| e.id)
    }
}

/// How the working scale of a curve was chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum ScaleSelection {
    /// Flattest centered window of the given length.
    Plateau { window: usize },
    /// Fixed by the caller.
    Override,
    /// Taken from a named preset.
    Preset(String),
}

/// GRIDE estimates over doubling scales `k = 1, 2, 4, …` and the chosen scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleCurve {
    pub entries: Vec<ScaleEntry>,
    pub selected_k: Option<usize>,
    pub selection: Option<ScaleSelection>,
}

impl ScaleCurve {
    /// Builds a curve from `(k, id)` pairs; scales must double from one entry to the next.
    pub fn from_points(points: &[(usize, f64)]) -> Result<Self> {
        let entries: Vec<ScaleEntry> = points
            .iter()
            .map(|&(k, id)| ScaleEntry {
                k,
                estimate: Ok(IdEstimate { id, k, n_used: 0, log_likelihood: f64::NAN, n_unit_ratios: 0 }),
            })
            .collect();
        let curve = Self { entries, selected_k: None, selection: None };
        curve.check_doubling()?;
        Ok(curve)
    }

    fn check_doubling(&self) -> Result<()> {
        if self.entries.windows(2).any(|w| w[1].k != 2 * w[0].k) {
            bail!(Parameter, "scale curve entries must double in k");
        }
        Ok(())
    }

    pub fn entry(&self, k: usize) -> Option<&ScaleEntry> {
        self.entries.iter().find(|e| e.k == k)
    }

    pub fn selected(&self) -> Option<&ScaleEntry> {
        self.selected_k.and_then(|k| self.entry(k))
    }

    /// Applies a scale choice, recording it on the curve.
    pub fn choose(&mut self, choice: &ScaleChoice) -> Result<usize> {
        let (k, how) = match choice {
            ScaleChoice::Plateau { window } => {
                (select_scale(self, *window)?, ScaleSelection::Plateau { window: *window })
            }
            ScaleChoice::Fixed(k) => (*k, ScaleSelection::Override),
            ScaleChoice::Preset(name) => {
                let preset = preset(name)
                    .ok_or_else(|| Error::Parameter(format!("unknown scale preset {name:?}")))?;
                (preset.k, ScaleSelection::Preset(preset.name.to_string()))
            }
        };
        match self.entry(k) {
            Some(e) if e.estimate.is_ok() => {}
            Some(_) => bail!(Numerical, "estimate at chosen scale k={k} failed"),
            None => bail!(Parameter, "chosen scale k={k} is not on the curve"),
        }
        self.selected_k = Some(k);
        self.selection = Some(how);
        Ok(k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScaleChoice {
    Plateau { window: usize },
    Fixed(usize),
    Preset(String),
}

impl Default for ScaleChoice {
    fn default() -> Self {
        ScaleChoice::Plateau { window: 3 }
    }
}

/// Scales swept for a table with the given `k_max`: `2⁰ … 2^⌊log₂(k_max/2)⌋`, capped at `2¹²`.
pub fn sweep_scales(k_max: usize) -> Vec<usize> {
    let mut ks = Vec::new();
    let mut k = 1;
    while 2 * k <= k_max && k <= MAX_SCALE {
        ks.push(k);
        k *= 2;
    }
    ks
}

/// GRIDE at every doubling scale the table supports. Per-scale failures are kept as failed entries.
pub fn scale_sweep(table: &NeighborTable) -> Result<ScaleCurve> {
    let ks = sweep_scales(table.k_max());
    if ks.is_empty() {
        bail!(Parameter, "k_max={} is too small for any scale (need k_max >= 2)", table.k_max());
    }
    let entries = par::map(ks.len(), |i| {
        let k = ks[i];
        ScaleEntry { k, estimate: mu_ratios(table, k).and_then(|mu| estimate_gride(&mu)) }
    });
    Ok(ScaleCurve { entries, selected_k: None, selection: None })
}

/// Plateau rule: the centre of the length-`window` run of consecutive valid
/// entries with the smallest mean `|Δid / Δlog₂k|`.
///
/// Ties (within 1e-12) are resolved by taking the middle tied window, rounding
/// toward larger `k`; a perfectly flat curve therefore yields its middle scale.
pub fn select_scale(curve: &ScaleCurve, window: usize) -> Result<usize> {
    if window < 2 {
        bail!(Parameter, "plateau window must be at least 2, got {window}");
    }
    curve.check_doubling()?;
    let mut scored: Vec<(f64, usize)> = Vec::new();
    for start in 0..curve.entries.len().saturating_sub(window - 1) {
        let run = &curve.entries[start..start + window];
        let ids: Option<Vec<f64>> = run.iter().map(ScaleEntry::id).collect();
        let Some(ids) = ids else { continue };
        let slope: f64 = run
            .windows(2)
            .zip(ids.windows(2))
            .map(|(e, v)| {
                let dlog = libm::log2(e[1].k as f64) - libm::log2(e[0].k as f64);
                ((v[1] - v[0]) / dlog).abs()
            })
            .sum::<f64>()
            / (window - 1) as f64;
        scored.push((slope, run[window / 2].k));
    }
    if scored.is_empty() {
        bail!(Parameter, "scale curve has no run of {window} consecutive valid entries");
    }
    let best = scored.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let tied: Vec<usize> = scored.iter().filter(|s| s.0 - best <= 1e-12).map(|s| s.1).collect();
    Ok(tied[tied.len() / 2])
}

/// Logarithm used to normalize dimensions by embedding size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogBase {
    #[default]
    Natural,
    Two,
    Ten,
}

impl LogBase {
    pub fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Natural => libm::log(x),
            LogBase::Two => libm::log2(x),
            LogBase::Ten => libm::log10(x),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LogBase::Natural => "e",
            LogBase::Two => "2",
            LogBase::Ten => "10",
        }
    }
}

/// `id / log(D)`: puts dimensions of models with different widths on a common scale.
pub fn normalize_id(id: f64, embedding_dim: f64, base: LogBase) -> Result<f64> {
    if !(embedding_dim >= 2.0) {
        bail!(Parameter, "embedding size must be at least 2, got {embedding_dim}");
    }
    Ok(id / base.log(embedding_dim))
}

/// A published per-model scale choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScalePreset {
    pub name: &'static str,
    pub k: usize,
}

/// GRIDE scales selected by scale analysis for a set of published model
/// checkpoints.
pub const PRESETS: &[ScalePreset] = &[
    ScalePreset { name: "opt-125m", k: 64 },
    ScalePreset { name: "opt-1.3b", k: 32 },
    ScalePreset { name: "opt-13b", k: 32 },
    ScalePreset { name: "pythia-6.9b", k: 16 },
    ScalePreset { name: "pythia-6.9b@64000", k: 16 },
    ScalePreset { name: "pythia-6.9b@32000", k: 32 },
    ScalePreset { name: "pythia-6.9b@16000", k: 32 },
    ScalePreset { name: "pythia-6.9b@8000", k: 32 },
    ScalePreset { name: "pythia-6.9b@4000", k: 64 },
    ScalePreset { name: "pythia-6.9b@3000", k: 64 },
    ScalePreset { name: "pythia-6.9b@2000", k: 16 },
    ScalePreset { name: "pythia-6.9b@1000", k: 16 },
    ScalePreset { name: "pythia-6.9b@512", k: 16 },
];

/// Case-insensitive preset lookup.
pub fn preset(name: &str) -> Option<ScalePreset> {
    PRESETS.iter().copied().find(|p| p.name.eq_ignore_ascii_case(name))
}

/// Mean and sample standard deviation over repeats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepeatSummary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl RepeatSummary {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            libm::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64)
        } else {
            0.0
        };
        Some(Self { mean, std, n })
    }
}

/// Settings for the full kNN → sweep → selection pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct IdConfig {
    /// Neighbors computed per point; clamped to `N - 1`.
    pub k_max: usize,
    pub scale: ScaleChoice,
}

impl Default for IdConfig {
    fn default() -> Self {
        Self { k_max: 128, scale: ScaleChoice::default() }
    }
}

/// Scale analysis of one point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct IdAnalysis {
    pub curve: ScaleCurve,
    pub discarded_duplicates: usize,
    pub n_points: usize,
    pub ambient_dim: usize,
}

impl IdAnalysis {
    /// Estimate at the selected scale.
    pub fn estimate(&self) -> Option<IdEstimate> {
        self.curve.selected().and_then(|e| e.estimate.as_ref().ok().copied())
    }
}

/// kNN, duplicate removal, GRIDE scale sweep, and scale choice for one matrix.
pub fn analyze(x: &Matrix, config: &IdConfig) -> Result<IdAnalysis> {
    if x.rows() < 3 {
        bail!(Parameter, "need at least 3 points for a scale analysis, got {}", x.rows());
    }
    let k_max = config.k_max.min(x.rows() - 1);
    let table = knn_exact(x, k_max)?;
    let (table, discarded) = filter_degenerate(&table)?;
    let mut curve = scale_sweep(&table)?;
    curve.choose(&config.scale)?;
    Ok(IdAnalysis { curve, discarded_duplicates: discarded, n_points: x.rows(), ambient_dim: x.cols() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_abs_diff_eq;

    fn line_table() -> NeighborTable {
        knn_exact(&Matrix::new(3, 1, vec![0.0, 1.0, 3.0]).unwrap(), 2).unwrap()
    }

    #[test]
    fn mu_on_hand_geometry() {
        let mu = mu_ratios(&line_table(), 1).unwrap();
        assert_eq!(mu.values(), &[3.0, 2.0, 1.5]);
    }

    #[test]
    fn mu_equal_distances_keep_unit_ratio() {
        let table = NeighborTable::from_distances(2, vec![vec![1.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let mu = mu_ratios(&table, 1).unwrap();
        assert_eq!(mu.values(), &[1.0, 2.0]);
        assert_eq!(mu.unit_count(), 1);
    }

    #[test]
    fn mu_scale_beyond_table() {
        let table = NeighborTable::from_distances(3, vec![(1..=8).map(f64::from).collect()]).unwrap();
        assert!(mu_ratios(&table, 5).is_err());
        assert!(mu_ratios(&table, 4).is_ok());
    }

    #[test]
    fn twonn_closed_form() {
        let mu = MuRatios::new(1, 3, vec![3.0, 2.0, 1.5]).unwrap();
        let est = estimate_twonn(&mu).unwrap();
        let expected = 3.0 / (libm::log(3.0) + libm::log(2.0) + libm::log(1.5));
        assert_abs_diff_eq!(est.id, expected, epsilon = 1e-15);
        assert_abs_diff_eq!(est.id, 1.3654, epsilon = 1e-4);
    }

    #[test]
    fn twonn_of_e_is_one() {
        let e = core::f64::consts::E;
        let est = estimate_twonn(&MuRatios::new(1, 2, vec![e; 4]).unwrap()).unwrap();
        assert_abs_diff_eq!(est.id, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn twonn_all_unit_is_degenerate() {
        let err = estimate_twonn(&MuRatios::new(1, 2, vec![1.0; 12]).unwrap()).unwrap_err();
        assert!(err.is_numerical());
        assert!(estimate_gride(&MuRatios::new(3, 2, vec![1.0; 12]).unwrap()).is_err());
    }

    #[test]
    fn twonn_requires_k_one() {
        assert!(estimate_twonn(&MuRatios::new(2, 2, vec![2.0; 12]).unwrap()).is_err());
    }

    #[test]
    fn gride_k1_matches_twonn() {
        let mu = MuRatios::new(1, 5, vec![1.1, 1.7, 1.3, 1.05, 2.2, 1.4, 1.25, 1.9, 1.15, 1.33]).unwrap();
        let a = estimate_twonn(&mu).unwrap();
        let b = estimate_gride(&mu).unwrap();
        assert_abs_diff_eq!(a.id, b.id, epsilon = 1e-7);
        assert_abs_diff_eq!(a.log_likelihood, b.log_likelihood, epsilon = 1e-9);
    }

    #[test]
    fn gride_optimum_is_local_maximum() {
        let mu = MuRatios::new(4, 10, vec![1.3, 1.6, 1.2, 1.45, 1.9, 1.25, 1.5, 1.35, 1.7, 1.28, 1.41])
            .unwrap();
        let est = estimate_gride(&mu).unwrap();
        let l = gride_log_likelihood(&mu, est.id);
        assert_abs_diff_eq!(l, est.log_likelihood, epsilon = 1e-9);
        assert!(l >= gride_log_likelihood(&mu, est.id + 1e-3));
        assert!(l >= gride_log_likelihood(&mu, est.id - 1e-3));
    }

    #[test]
    fn gride_rejects_estimate_above_bound() {
        // ratios barely above one imply a huge dimension
        let mu = MuRatios::new(1, 2, vec![1.0 + 1e-6; 20]).unwrap();
        assert!(estimate_gride(&mu).is_err());
        assert!(estimate_twonn(&mu).is_err());
    }

    #[test]
    fn ln_beta_matches_direct_form_and_stays_finite() {
        // B(3,3) = 2!2!/5! = 1/30
        assert_abs_diff_eq!(ln_beta_symmetric(3), libm::log(1.0 / 30.0), epsilon = 1e-12);
        assert_abs_diff_eq!(ln_beta_symmetric(1), 0.0, epsilon = 1e-15);
        assert!(ln_beta_symmetric(4096).is_finite());
    }

    #[test]
    fn sweep_scale_rule() {
        assert_eq!(sweep_scales(4096), (0..12).map(|p| 1usize << p).collect::<Vec<_>>());
        assert_eq!(sweep_scales(5), vec![1, 2]);
        assert_eq!(sweep_scales(1), Vec::<usize>::new());
        assert_eq!(*sweep_scales(100_000).last().unwrap(), 4096);
    }

    #[test]
    fn select_flattest_window() {
        let curve =
            ScaleCurve::from_points(&[(1, 9.0), (2, 7.0), (4, 5.1), (8, 5.0), (16, 5.0), (32, 4.2)]).unwrap();
        assert_eq!(select_scale(&curve, 3).unwrap(), 8);
    }

    #[test]
    fn select_flat_curve_returns_middle() {
        let pts: Vec<(usize, f64)> = (0..12).map(|p| (1usize << p, 5.0)).collect();
        let curve = ScaleCurve::from_points(&pts).unwrap();
        // 10 tied windows centred on 2..1024; upper middle is the 6th
        assert_eq!(select_scale(&curve, 3).unwrap(), 64);
        let curve = ScaleCurve::from_points(&pts[..4]).unwrap();
        assert_eq!(select_scale(&curve, 3).unwrap(), 4);
    }

    #[test]
    fn select_too_short_curve() {
        let curve = ScaleCurve::from_points(&[(1, 3.0), (2, 3.0)]).unwrap();
        assert!(select_scale(&curve, 3).is_err());
    }

    #[test]
    fn select_skips_failed_entries() {
        let mut curve = ScaleCurve::from_points(&[(1, 9.0), (2, 5.0), (4, 5.0), (8, 5.0), (16, 1.0)]).unwrap();
        curve.entries[2].estimate = Err(Error::Numerical("x".into()));
        assert!(select_scale(&curve, 3).is_err());
        assert_eq!(select_scale(&curve, 2).unwrap(), 16);
    }

    #[test]
    fn choose_override_and_preset() {
        let pts: Vec<(usize, f64)> = (0..7).map(|p| (1usize << p, 5.0 + p as f64)).collect();
        let mut curve = ScaleCurve::from_points(&pts).unwrap();
        assert_eq!(curve.choose(&ScaleChoice::Preset("Pythia-6.9B".into())).unwrap(), 16);
        assert_eq!(curve.selection, Some(ScaleSelection::Preset("pythia-6.9b".into())));
        assert_eq!(curve.choose(&ScaleChoice::Fixed(4)).unwrap(), 4);
        assert_eq!(curve.selection, Some(ScaleSelection::Override));
        assert!(curve.choose(&ScaleChoice::Fixed(256)).is_err());
        assert!(curve.choose(&ScaleChoice::Preset("gpt-9".into())).is_err());
    }

    #[test]
    fn presets_match_published_scales() {
        assert_eq!(preset("pythia-6.9b").unwrap().k, 16);
        assert_eq!(preset("opt-1.3b").unwrap().k, 32);
        assert_eq!(preset("opt-125m").unwrap().k, 64);
        assert_eq!(preset("opt-13b").unwrap().k, 32);
    }

    #[test]
    fn normalization() {
        let e2 = core::f64::consts::E * core::f64::consts::E;
        assert_abs_diff_eq!(normalize_id(8.0, e2, LogBase::Natural).unwrap(), 4.0, epsilon = 1e-12);
        let d = 2048.0;
        assert_abs_diff_eq!(normalize_id(libm::log(d), d, LogBase::Natural).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(normalize_id(24.0, d, LogBase::Natural).unwrap(), 3.148, epsilon = 5e-4);
        assert_abs_diff_eq!(normalize_id(22.0, d, LogBase::Two).unwrap(), 2.0, epsilon = 1e-12);
        assert!(normalize_id(1.0, 1.0, LogBase::Natural).is_err());
    }

    #[test]
    fn repeat_summary() {
        let s = RepeatSummary::from_values(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_abs_diff_eq!(s.std, 1.0, epsilon = 1e-15);
        assert_eq!(RepeatSummary::from_values(&[4.0]).unwrap().std, 0.0);
        assert!(RepeatSummary::from_values(&[]).is_none());
    }
}
