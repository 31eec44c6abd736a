// SPDX-License-Identifier: MIT OR Apache-2.0

//! File formats, run manifests, synthetic data, reports and the command line
//! for [`layergeom_core`].

pub mod cli;
pub mod encode;
pub mod error;
pub mod fixture;
pub mod io;
pub mod manifest;
pub mod report;
pub mod synth;
pub mod words;

pub use error::{Error, Result};
pub use layergeom_core as core;
pub use manifest::{load_manifest, LoadedManifest, RunManifest};
pub use report::{build_report, Report};
