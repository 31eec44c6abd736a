// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use common::{gaussian, naive_matmul, naive_pearson, rng};
use layergeom_core::encoding::{
    add_fir_delays, lanczos_resample, ridge_fit_cv, ridge_path, score_voxelwise, RidgeConfig, StimulusFeatures,
};
use layergeom_core::Matrix;
use rand::Rng;

fn word_times(n: usize, spacing: f64, jitter: f64, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|i| i as f64 * spacing + jitter * rng.random::<f64>()).collect()
}

#[test]
fn constant_signal_is_preserved() {
    let mut r = rng(41);
    let times = word_times(400, 0.35, 0.2, &mut r);
    let stim = StimulusFeatures::new(times, Matrix::from_fn(400, 3, |_, j| [2.5, -1.0, 1e3][j])).unwrap();
    let out = lanczos_resample(&stim, 2.0, 65, 3).unwrap();
    assert!(out.uncovered.is_empty());
    for row in out.values.iter_rows() {
        for (v, c) in row.iter().zip([2.5, -1.0, 1e3]) {
            assert!((v - c).abs() <= 1e-9 * c.abs().max(1.0), "{v} vs {c}");
        }
    }
}

#[test]
fn resampling_rows_sum_to_one() {
    let mut r = rng(42);
    let w = 150;
    let times = word_times(w, 0.4, 0.3, &mut r);
    let identity = Matrix::from_fn(w, w, |i, j| if i == j { 1.0 } else { 0.0 });
    let out = lanczos_resample(&StimulusFeatures::new(times, identity).unwrap(), 2.0, 30, 3).unwrap();
    for (t, row) in out.values.iter_rows().enumerate() {
        if !out.uncovered.contains(&t) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn slow_sinusoid_matches_analytic_values() {
    let tr = 2.0;
    let freq = 0.04;
    let times: Vec<f64> = (0..3000).map(|i| i as f64 * 0.05 - 10.0).collect();
    let feats = Matrix::from_fn(times.len(), 1, |i, _| (2.0 * std::f64::consts::PI * freq * times[i]).sin());
    let out = lanczos_resample(&StimulusFeatures::new(times, feats).unwrap(), tr, 60, 3).unwrap();
    let worst = (0..60)
        .map(|t| (out.values.get(t, 0) - (2.0 * std::f64::consts::PI * freq * t as f64 * tr).sin()).abs())
        .fold(0.0, f64::max);
    assert!(worst < 0.02, "max error {worst}");
}

#[test]
fn noiseless_linear_responses_are_recovered() {
    let mut r = rng(43);
    let (t, p, v) = (500, 20, 10);
    let x = gaussian(t, p, &mut r);
    let b = gaussian(p, v, &mut r);
    let y = naive_matmul(&x, &b);
    let config = RidgeConfig::default();
    let fit = ridge_fit_cv(&x, &y, &config).unwrap();
    for j in 0..v {
        assert!(fit.cv_curve.get(0, j) >= 0.999, "voxel {j}: {}", fit.cv_curve.get(0, j));
        assert!(fit.cv_scores.per_voxel[j] >= 0.999);
    }
    let x_new = gaussian(200, p, &mut r);
    let held = fit.score(&x_new, &naive_matmul(&x_new, &b)).unwrap();
    assert!(held.per_voxel.iter().all(|&s| s >= 0.999));
}

#[test]
fn null_responses_score_near_zero() {
    let mut r = rng(44);
    let (t, p, v) = (1000, 20, 20);
    let x = gaussian(t, p, &mut r);
    let y = gaussian(t, v, &mut r);
    let train: Vec<usize> = (0..800).collect();
    let test: Vec<usize> = (800..1000).collect();
    let fit = ridge_fit_cv(&x.select_rows(&train), &y.select_rows(&train), &RidgeConfig::default()).unwrap();
    let held = fit.score(&x.select_rows(&test), &y.select_rows(&test)).unwrap();
    assert!(held.mean().abs() < 0.05, "mean r {}", held.mean());
}

#[test]
fn delay_two_weights_dominate() {
    let mut r = rng(45);
    let (t, f, v) = (600, 4, 6);
    let feats = gaussian(t, f, &mut r);
    let delays = [1, 2, 3, 4];
    let x = add_fir_delays(&feats, &delays).unwrap();
    let lagged = add_fir_delays(&feats, &[2]).unwrap();
    let y = naive_matmul(&lagged, &gaussian(f, v, &mut r));
    let fit = ridge_fit_cv(&x, &y, &RidgeConfig::default()).unwrap();
    let block_norm = |blk: usize| {
        (blk * f..(blk + 1) * f)
            .flat_map(|i| fit.weights.row(i).to_vec())
            .map(|w| w * w)
            .sum::<f64>()
            .sqrt()
    };
    let norms: Vec<f64> = (0..delays.len()).map(block_norm).collect();
    let share = norms[1] / norms.iter().sum::<f64>();
    assert!(share > 0.8, "delay-2 share {share}, block norms {norms:?}");
}

#[test]
fn shrinkage_is_monotone() {
    let mut r = rng(46);
    let x = gaussian(80, 12, &mut r);
    let y = gaussian(80, 3, &mut r);
    let alphas: Vec<f64> = (0..12).map(|i| 10f64.powf(i as f64 - 3.0)).collect();
    let path = ridge_path(&x, &y, &alphas).unwrap();
    let norms: Vec<f64> = path.iter().map(Matrix::frobenius_norm).collect();
    assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
    assert!(norms.last().unwrap() / norms[0] < 1e-3);
}

#[test]
fn voxelwise_scores_match_direct_formula() {
    let mut r = rng(47);
    let x = gaussian(100, 4, &mut r);
    let w = gaussian(4, 5, &mut r);
    let y = gaussian(100, 5, &mut r);
    let scores = score_voxelwise(&w, &x, &y).unwrap();
    let pred = naive_matmul(&x, &w);
    for j in 0..5 {
        let oracle = naive_pearson(&pred.column(j), &y.column(j));
        assert!((scores.per_voxel[j] - oracle).abs() <= 1e-12);
    }
    let neg = Matrix::from_fn(100, 5, |i, j| -pred.get(i, j));
    assert!(score_voxelwise(&w, &x, &neg).unwrap().per_voxel.iter().all(|&s| (s + 1.0).abs() < 1e-12));
}

#[test]
fn folds_are_reproducible() {
    let mut r = rng(48);
    let x = gaussian(300, 6, &mut r);
    let y = gaussian(300, 4, &mut r);
    let config = RidgeConfig { seed: 9, ..RidgeConfig::default() };
    let a = ridge_fit_cv(&x, &y, &config).unwrap();
    let b = ridge_fit_cv(&x, &y, &config).unwrap();
    assert_eq!(a, b);
}
