// SPDX-License-Identifier: MIT OR Apache-2.0

//! Word onset tables: CSV with a `word_index,onset_seconds` header.

use std::path::Path;

use layergeom_core::encoding::StimulusFeatures;
use layergeom_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WordTime {
    pub word_index: usize,
    pub onset_seconds: f64,
}

pub fn read_word_times(path: impl AsRef<Path>) -> Result<Vec<WordTime>> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_err)?;
    let rows: Vec<WordTime> = reader.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err)?;
    if rows.is_empty() {
        return Err(Error::Config(format!("{}: no word times", path.display())));
    }
    if let Some(w) = rows.iter().find(|w| !w.onset_seconds.is_finite()) {
        return Err(Error::Config(format!("{}: word {} has a non-finite onset", path.display(), w.word_index)));
    }
    Ok(rows)
}

pub fn write_word_times(path: impl AsRef<Path>, words: &[WordTime]) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in words {
        w.serialize(row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    crate::io::write_atomic(path, &bytes)
}

/// Pairs each onset with its feature row (`word_index` selects the row).
pub fn stimulus(words: &[WordTime], features: &Matrix) -> Result<StimulusFeatures> {
    if let Some(w) = words.iter().find(|w| w.word_index >= features.rows()) {
        return Err(Error::Config(format!(
            "word index {} is outside the {} feature rows",
            w.word_index,
            features.rows()
        )));
    }
    let idx: Vec<usize> = words.iter().map(|w| w.word_index).collect();
    let times = words.iter().map(|w| w.onset_seconds).collect();
    Ok(StimulusFeatures::new(times, features.select_rows(&idx))?)
}
