// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded synthetic point clouds with known intrinsic dimension, and synthetic
//! voxel responses for the encoding pipeline.
//!
//! Generative processes (`u` uniform, `z` standard normal, all draws from a
//! ChaCha8 stream seeded with `seed`):
//!
//! | kind         | latent coordinates                                   | latent dim |
//! |--------------|------------------------------------------------------|-----------|
//! | `hypercube`  | `u ∈ [0,1]^d`                                         | d         |
//! | `sphere`     | `z / ‖z‖`, `z ∈ R^{d+1}` (the d-sphere)               | d + 1     |
//! | `gaussian`   | `z ∈ R^d`                                             | d         |
//! | `swiss_roll` | `(t cos t, h, t sin t)`, `t ∈ [1.5π, 4.5π]`, `h ∈ [0, 21]` | 3     |
//! | `low_rank`   | `z B` with `B` a `d × D` Gaussian mixing matrix       | D (rank d)|
//!
//! Latent coordinates are mapped into the ambient space with a random
//! orthonormal frame (QR of a Gaussian matrix); when the latent dimension
//! already equals `D` the coordinates are used as they are. Isotropic Gaussian
//! noise of standard deviation `noise` is added last.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use layergeom_core::encoding::add_fir_delays;
use layergeom_core::{Matrix, MatrixContainer};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifoldKind {
    Hypercube,
    Sphere,
    Gaussian,
    SwissRoll,
    LowRank,
}

impl ManifoldKind {
    pub const ALL: [ManifoldKind; 5] =
        [ManifoldKind::Hypercube, ManifoldKind::Sphere, ManifoldKind::Gaussian, ManifoldKind::SwissRoll, ManifoldKind::LowRank];

    pub fn name(self) -> &'static str {
        match self {
            ManifoldKind::Hypercube => "hypercube",
            ManifoldKind::Sphere => "sphere",
            ManifoldKind::Gaussian => "gaussian",
            ManifoldKind::SwissRoll => "swiss_roll",
            ManifoldKind::LowRank => "low_rank",
        }
    }
}

impl fmt::Display for ManifoldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ManifoldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.replace('-', "_").to_ascii_lowercase();
        ManifoldKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown manifold kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManifoldSpec {
    pub kind: ManifoldKind,
    /// Intrinsic dimension; must be 2 for the swiss roll.
    pub d: usize,
    /// Ambient dimension `D`.
    pub ambient: usize,
    pub n: usize,
    pub noise: f64,
    pub seed: u64,
}

pub fn synth_manifold(spec: &ManifoldSpec) -> Result<MatrixContainer> {
    Ok(MatrixContainer::from_f64(&synth_points(spec)?)?)
}

/// Same as [`synth_manifold`], as a working matrix.
pub fn synth_points(spec: &ManifoldSpec) -> Result<Matrix> {
    let &ManifoldSpec { kind, d, ambient, n, noise, seed } = spec;
    if n == 0 || d == 0 || ambient == 0 {
        return Err(Error::Config("n, d and the ambient dimension must be positive".into()));
    }
    if d > ambient {
        return Err(Error::Config(format!("intrinsic dimension {d} exceeds ambient dimension {ambient}")));
    }
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(Error::Config(format!("noise must be a finite non-negative value, got {noise}")));
    }
    match kind {
        ManifoldKind::Sphere if ambient < d + 1 => {
            return Err(Error::Config(format!("a {d}-sphere needs ambient dimension >= {}", d + 1)));
        }
        ManifoldKind::SwissRoll if d != 2 => {
            return Err(Error::Config(format!("the swiss roll is 2-dimensional, got d={d}")));
        }
        ManifoldKind::SwissRoll if ambient < 3 => {
            return Err(Error::Config("the swiss roll needs ambient dimension >= 3".into()));
        }
        _ => {}
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latent = match kind {
        ManifoldKind::Hypercube => Matrix::from_fn(n, d, |_, _| rng.random::<f64>()),
        ManifoldKind::Gaussian => gaussian(n, d, &mut rng),
        ManifoldKind::Sphere => {
            let mut z = gaussian(n, d + 1, &mut rng);
            for i in 0..n {
                let row = z.row_mut(i);
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                row.iter_mut().for_each(|v| *v /= norm);
            }
            z
        }
        ManifoldKind::SwissRoll => {
            let mut m = Matrix::zeros(n, 3);
            for i in 0..n {
                let t = 1.5 * PI * (1.0 + 2.0 * rng.random::<f64>());
                let h = 21.0 * rng.random::<f64>();
                m.row_mut(i).copy_from_slice(&[t * t.cos(), h, t * t.sin()]);
            }
            m
        }
        ManifoldKind::LowRank => {
            let z = gaussian(n, d, &mut rng);
            let mix = gaussian(d, ambient, &mut rng);
            z.matmul(&mix)?
        }
    };
    let mut x = if latent.cols() == ambient { latent } else { embed(&latent, ambient, &mut rng)? };
    if noise > 0.0 {
        for v in x.as_mut_slice() {
            *v += noise * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(x)
}

fn gaussian(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))
}

/// Random `D × m` matrix with orthonormal columns.
pub fn orthonormal_frame(ambient: usize, m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(ambient, m, |_, _| rng.sample(StandardNormal));
    g.qr().q()
}

fn embed(latent: &Matrix, ambient: usize, rng: &mut ChaCha8Rng) -> Result<Matrix> {
    let frame = Matrix::from_dmatrix(&orthonormal_frame(ambient, latent.cols(), rng).transpose());
    Ok(latent.matmul(&frame)?)
}

/// Synthetic voxel responses from scan-grid features.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseSpec {
    pub n_voxels: usize,
    /// Lag (in TRs) and gain of each response component.
    pub lags: Vec<(usize, f64)>,
    /// Noise standard deviation relative to each voxel's signal standard deviation.
    pub noise: f64,
    pub seed: u64,
}

/// `Y = Σ_lag gain · shift(X, lag) · B + noise`, with `B` a Gaussian
/// `F × V` map drawn from `seed` and noise scaled per voxel.
pub fn synth_responses(features: &Matrix, spec: &ResponseSpec) -> Result<Matrix> {
    if spec.n_voxels == 0 || spec.lags.is_empty() {
        return Err(Error::Config("responses need at least one voxel and one lag".into()));
    }
    let (t, f) = features.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let b = gaussian(f, spec.n_voxels, &mut rng);
    let mut signal = Matrix::zeros(t, spec.n_voxels);
    for &(lag, gain) in &spec.lags {
        let shifted = if lag == 0 { features.clone() } else { add_fir_delays(features, &[lag])? };
        let part = shifted.matmul(&b)?;
        for (s, p) in signal.as_mut_slice().iter_mut().zip(part.as_slice()) {
            *s += gain * p;
        }
    }
    let sd: Vec<f64> = (0..spec.n_voxels)
        .map(|j| {
            let c = signal.column(j);
            let m = c.iter().sum::<f64>() / t as f64;
            (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / t as f64).sqrt()
        })
        .collect();
    for i in 0..t {
        for (j, v) in signal.row_mut(i).iter_mut().enumerate() {
            *v += spec.noise * sd[j] * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(signal)
}
