// SPDX-License-Identifier: MIT OR Apache-2.0

//! Exact k-nearest-neighbor distances.
//!
//! Brute force over query blocks: each block of queries sweeps the reference
//! set in cache-sized tiles, then keeps its `k_max` smallest distances with a
//! partial selection. Every query is computed independently, so the result
//! does not depend on how blocks are scheduled across threads.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::matrix::Matrix;
use crate::par;

const QUERY_BLOCK: usize = 32;
const REF_TILE: usize = 256;

/// Per-point ascending distances to the `k_max` nearest other points.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    n_points: usize,
    k_max: usize,
    ambient_dim: usize,
    distances: Vec<f64>,
}

impl NeighborTable {
    /// Builds a table from raw rows, checking sortedness and non-negativity.
    pub fn from_distances(ambient_dim: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_points = rows.len();
        let k_max = rows.first().map_or(0, Vec::len);
        if n_points == 0 || k_max == 0 {
            bail!(Parameter, "neighbor table needs at least one point and one neighbor");
        }
        let mut distances = Vec::with_capacity(n_points * k_max);
        for (i, r) in rows.into_iter().enumerate() {
            if r.len() != k_max {
                bail!(Shape, "point {i} has {} distances, expected {k_max}", r.len());
            }
            if r.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) || r.windows(2).any(|w| w[0] > w[1]) {
                bail!(Parameter, "distances of point {i} must be finite, non-negative and ascending");
            }
            distances.extend(r);
        }
        Ok(Self { n_points, k_max, ambient_dim, distances })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// Column count of the data the table was built from.
    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    /// Sorted distances of point `i`; entry `j - 1` is the distance to its `j`-th neighbor.
    pub fn distances(&self, i: usize) -> &[f64] {
        &self.distances[i * self.k_max..(i + 1) * self.k_max]
    }

    /// Distance from point `i` to its `j`-th neighbor (1-based `j`).
    pub fn r(&self, i: usize, j: usize) -> f64 {
        self.distances[i * self.k_max + j - 1]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.distances.chunks_exact(self.k_max)
    }

    /// Keeps only the first `k` neighbors of every point.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.k_max {
            bail!(Parameter, "cannot truncate table with k_max={} to {k}", self.k_max);
        }
        let distances = self.iter().flat_map(|d| d[..k].iter().copied()).collect();
        Ok(Self { n_points: self.n_points, k_max: k, ambient_dim: self.ambient_dim, distances })
    }
}

/// Exact Euclidean kNN distances for every row of `x`, self excluded.
///
/// Distances are accumulated in `f64`. A duplicated row shows up as a zero
/// first-neighbor distance, never as a self match.
pub fn knn_exact(x: &Matrix, k_max: usize) -> Result<NeighborTable> {
    let n = x.rows();
    if k_max == 0 || k_max + 1 > n {
        bail!(Parameter, "k_max={k_max} out of range for {n} points (need 1 <= k_max <= N-1)");
    }
    let n_blocks = n.div_ceil(QUERY_BLOCK);
    let blocks = par::map(n_blocks, |b| query_block(x, b * QUERY_BLOCK, ((b + 1) * QUERY_BLOCK).min(n), k_max));
    let mut distances = Vec::with_capacity(n * k_max);
    for block in blocks {
        distances.extend(block);
    }
    Ok(NeighborTable { n_points: n, k_max, ambient_dim: x.cols(), distances })
}

fn query_block(x: &Matrix, start: usize, end: usize, k_max: usize) -> Vec<f64> {
    let n = x.rows();
    let nq = end - start;
    // row q holds squared distances from query start+q to every point
    let mut sq = vec![0.0f64; nq * n];
    for tile in (0..n).step_by(REF_TILE) {
        let tile_end = (tile + REF_TILE).min(n);
        for q in 0..nq {
            let a = x.row(start + q);
            let out = &mut sq[q * n..(q + 1) * n];
            for j in tile..tile_end {
                out[j] = squared_distance(a, x.row(j));
            }
        }
    }
    let mut result = Vec::with_capacity(nq * k_max);
    let mut buf = Vec::with_capacity(n - 1);
    for q in 0..nq {
        let i = start + q;
        buf.clear();
        let row = &sq[q * n..(q + 1) * n];
        buf.extend_from_slice(&row[..i]);
        buf.extend_from_slice(&row[i + 1..]);
        if k_max < buf.len() {
            buf.select_nth_unstable_by(k_max - 1, f64::total_cmp);
            buf.truncate(k_max);
        }
        buf.sort_unstable_by(f64::total_cmp);
        result.extend(buf.iter().map(|&d| libm::sqrt(d)));
    }
    result
}

#[inline]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            let d = x[l] - y[l];
            acc[l] += d * d;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        let d = x - y;
        tail += d * d;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Drops points whose first-neighbor distance is zero (exact duplicates).
///
/// Returns the filtered table and the number of points removed. Errors when
/// nothing remains.
pub fn filter_degenerate(table: &NeighborTable) -> Result<(NeighborTable, usize)> {
    let mut distances = Vec::with_capacity(table.distances.len());
    let mut kept = 0;
    for d in table.iter() {
        if d[0] > 0.0 {
            distances.extend_from_slice(d);
            kept += 1;
        }
    }
    if kept == 0 {
        bail!(Degenerate, "all {} points have a zero-distance neighbor", table.n_points);
    }
    let discarded = table.n_points - kept;
    if discarded > 0 {
        log::warn!("removed {discarded} of {} points with duplicate coordinates", table.n_points);
    }
    Ok((
        NeighborTable { n_points: kept, k_max: table.k_max, ambient_dim: table.ambient_dim, distances },
        discarded,
    ))
}
