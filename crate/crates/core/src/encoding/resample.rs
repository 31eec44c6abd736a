// SPDX-License-Identifier: MIT OR Apache-2.0

//! Word-time features to the scan grid, and FIR delay expansion.

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::matrix::Matrix;

/// Per-word feature rows with ascending onset times in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulusFeatures {
    times: Vec<f64>,
    features: Matrix,
}

impl StimulusFeatures {
    pub fn new(times: Vec<f64>, features: Matrix) -> Result<Self> {
        if times.len() != features.rows() {
            bail!(Shape, "{} onset times for {} feature rows", times.len(), features.rows());
        }
        if times.iter().any(|t| !t.is_finite()) {
            bail!(Parameter, "onset times must be finite");
        }
        if let Some(i) = times.windows(2).position(|w| w[1] <= w[0]) {
            bail!(Parameter, "onset times must be strictly ascending (words {i} and {})", i + 1);
        }
        Ok(Self { times, features })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }
}

/// `sin(πx)/(πx)` with the removable singularity filled in.
#[inline]
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = core::f64::consts::PI * x;
        libm::sin(px) / px
    }
}

/// Lanczos kernel with `lobes` lobes; zero outside `|x| < lobes`.
#[inline]
pub fn lanczos_kernel(x: f64, lobes: f64) -> f64 {
    if x.abs() >= lobes {
        0.0
    } else {
        sinc(x) * sinc(x / lobes)
    }
}

/// Result of resampling: the scan-grid matrix and the TRs no word reached.
#[derive(Debug, Clone, PartialEq)]
pub struct Resampled {
    pub values: Matrix,
    pub uncovered: Vec<usize>,
}

/// Weight-normalized Lanczos interpolation of word features onto TR times `t·tr`.
///
/// Output row `t` is `Σ_w L(f(t·tr − t_w)) x_w / Σ_w L(f(t·tr − t_w))` with
/// cutoff `f = 1/(2·tr)`. Rows with no kernel support are zero and reported in
/// [`Resampled::uncovered`].
pub fn lanczos_resample(stim: &StimulusFeatures, tr: f64, n_trs: usize, lobes: usize) -> Result<Resampled> {
    if !(tr > 0.0) || !tr.is_finite() {
        bail!(Parameter, "TR must be positive, got {tr}");
    }
    if n_trs == 0 {
        bail!(Parameter, "need at least one TR");
    }
    if lobes == 0 {
        bail!(Parameter, "Lanczos window needs at least one lobe");
    }
    let a = lobes as f64;
    let cutoff = 1.0 / (2.0 * tr);
    let reach = a / cutoff;
    let times = &stim.times;
    let (w_count, f_count) = stim.features.shape();
    let grid_end = (n_trs - 1) as f64 * tr;
    if !times.iter().any(|&t| t > -reach && t < grid_end + reach) {
        bail!(Parameter, "no word onset falls within reach of the scan grid");
    }

    let mut out = Matrix::zeros(n_trs, f_count);
    let mut uncovered = Vec::new();
    let mut first = 0;
    for t in 0..n_trs {
        let center = t as f64 * tr;
        while first < w_count && times[first] <= center - reach {
            first += 1;
        }
        let mut total = 0.0;
        let row = out.row_mut(t);
        for w in first..w_count {
            let dt = center - times[w];
            if dt <= -reach {
                break;
            }
            let weight = lanczos_kernel(cutoff * dt, a);
            if weight == 0.0 {
                continue;
            }
            total += weight;
            for (o, x) in row.iter_mut().zip(stim.features.row(w)) {
                *o += weight * x;
            }
        }
        if total.abs() < 1e-12 {
            row.iter_mut().for_each(|v| *v = 0.0);
            uncovered.push(t);
        } else {
            row.iter_mut().for_each(|v| *v /= total);
        }
    }
    if !uncovered.is_empty() {
        log::warn!("{} of {n_trs} TRs have no words within the Lanczos window", uncovered.len());
    }
    Ok(Resampled { values: out, uncovered })
}

/// Horizontal stack of copies of `x` shifted down by each delay, zero-filled at the top.
pub fn add_fir_delays(x: &Matrix, delays: &[usize]) -> Result<Matrix> {
    let (t, f) = x.shape();
    if delays.is_empty() {
        bail!(Parameter, "need at least one delay");
    }
    if let Some(&d) = delays.iter().find(|&&d| d >= t) {
        bail!(Parameter, "delay {d} is not shorter than the series ({t} TRs)");
    }
    let width = f * delays.len();
    let mut out = Matrix::zeros(t, width);
    for (block, &d) in delays.iter().enumerate() {
        for row in d..t {
            out.row_mut(row)[block * f..(block + 1) * f].copy_from_slice(x.row(row - d));
        }
    }
    Ok(out)
}

/// Drops `start` rows from the top and `end` rows from the bottom of a story.
pub fn trim_story(x: &Matrix, start: usize, end: usize) -> Result<Matrix> {
    if start + end >= x.rows() {
        bail!(Parameter, "trimming {start}+{end} rows leaves nothing of {}", x.rows());
    }
    let idx: Vec<usize> = (start..x.rows() - end).collect();
    Ok(x.select_rows(&idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_abs_diff_eq;

    #[test]
    fn constant_signal_is_preserved() {
        let times: Vec<f64> = (0..400).map(|i| 0.37 + i as f64 * 0.25).collect();
        let feats = Matrix::from_fn(400, 2, |_, j| if j == 0 { 3.5 } else { -1.25 });
        let stim = StimulusFeatures::new(times, feats).unwrap();
        let r = lanczos_resample(&stim, 2.0, 50, 3).unwrap();
        assert!(r.uncovered.is_empty());
        for row in r.values.iter_rows() {
            assert_abs_diff_eq!(row[0], 3.5, epsilon = 1e-9);
            assert_abs_diff_eq!(row[1], -1.25, epsilon = 1e-9);
        }
    }

    #[test]
    fn lone_word_on_a_tr() {
        let stim = StimulusFeatures::new(vec![4.0], Matrix::from_rows(&[[2.0, -7.0]]).unwrap()).unwrap();
        let r = lanczos_resample(&stim, 2.0, 5, 3).unwrap();
        assert_eq!(r.values.row(2), &[2.0, -7.0]);
        assert_eq!(r.values.row(1), &[2.0, -7.0]);
        // TRs 0 and 4 fall on the first kernel zero
        assert_eq!(r.uncovered, vec![0, 4]);
    }

    #[test]
    fn distant_trs_are_uncovered() {
        let stim = StimulusFeatures::new(vec![0.0], Matrix::from_rows(&[[1.0]]).unwrap()).unwrap();
        // reach is 3 lobes * 2 tr = 6 s at tr = 1; TRs 2 and 4 sit on kernel zeros
        let r = lanczos_resample(&stim, 1.0, 10, 3).unwrap();
        assert_eq!(r.uncovered, vec![2, 4, 6, 7, 8, 9]);
        assert_eq!(r.values.row(7), &[0.0]);
    }

    #[test]
    fn no_words_in_range() {
        let stim = StimulusFeatures::new(vec![1000.0], Matrix::from_rows(&[[1.0]]).unwrap()).unwrap();
        assert!(lanczos_resample(&stim, 2.0, 5, 3).is_err());
    }

    #[test]
    fn rejects_unsorted_times() {
        assert!(StimulusFeatures::new(vec![1.0, 1.0], Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn fir_single_and_double_delay() {
        let x = Matrix::from_rows(&[[1.0], [2.0], [3.0]]).unwrap();
        assert_eq!(add_fir_delays(&x, &[1]).unwrap().as_slice(), &[0.0, 1.0, 2.0]);
        let two = add_fir_delays(&x, &[1, 2]).unwrap();
        assert_eq!(two.shape(), (3, 2));
        assert_eq!(two.as_slice(), &[0.0, 0.0, 1.0, 0.0, 2.0, 1.0]);
        assert!(add_fir_delays(&x, &[3]).is_err());
    }

    #[test]
    fn trim() {
        let x = Matrix::from_fn(20, 1, |i, _| i as f64);
        let t = trim_story(&x, 10, 5).unwrap();
        assert_eq!(t.rows(), 5);
        assert_eq!(t.get(0, 0), 10.0);
        assert!(trim_story(&x, 15, 5).is_err());
    }
}
