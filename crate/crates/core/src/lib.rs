// SPDX-License-Identifier: MIT OR Apache-2.0

//! Geometry of neural-network layer representations.
//!
//! Numerical core for comparing the layers of a model: nonlinear intrinsic
//! dimension (TwoNN and GRIDE with a scale analysis), linear effective
//! dimension (PCA variance cutoff and participation ratio), linear CKA
//! between layers, voxelwise ridge encoding models, affine surprisal probes,
//! and the statistics that tie the resulting layer profiles together.
//!
//! The crate is `no_std` with `alloc` when built without the default `std`
//! feature; `std` only adds thread-parallel loops. File formats, the report
//! and the command line live in the companion `layergeom` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod encoding;
pub mod error;
pub mod intrinsic_dim;
pub mod linear_dim;
pub mod matrix;
pub mod neighbors;
pub mod optimize;
mod par;
pub mod probe;
pub mod similarity;
pub mod stats;

pub use error::{Error, Result};
pub use matrix::{Dtype, Header, Matrix, MatrixContainer, Values};
