// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense matrices and the `LMRX` binary container.
//!
//! [`Matrix`] is the row-major `f64` working type used by every algorithm in
//! the crate. [`MatrixContainer`] is the on-disk value: it remembers whether
//! the payload was `float32` or `float64` so a read/write cycle is bit-exact.
//!
//! Container layout (little-endian):
//!
//! ```text
//! 0..4    magic "LMRX"
//! 4       version = 1
//! 5       dtype code (0 = float32, 1 = float64)
//! 6..8    reserved, zero
//! 8..16   rows (u64)
//! 16..24  cols (u64)
//! 24..    rows * cols values, row-major
//! ```

use alloc::format;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"LMRX";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 24;

/// Row-major dense `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: alloc::vec![0.0; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!("row {i} has {} values, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn column_vector(values: Vec<f64>) -> Self {
        Self { rows: values.len(), cols: 1, data: values }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics; a zero-column matrix has no meaningful rows anyway
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: idx.len(), cols: self.cols, data }
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn scaled(&self, c: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * c).collect() }
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Matrix::from_dmatrix(&(self.to_dmatrix() * other.to_dmatrix())))
    }

    /// Per-column means.
    pub fn column_means(&self) -> Vec<f64> {
        let mut means = alloc::vec![0.0; self.cols];
        for r in self.iter_rows() {
            for (m, v) in means.iter_mut().zip(r) {
                *m += v;
            }
        }
        let n = self.rows as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    /// Copy with every column shifted to zero mean.
    pub fn centered(&self) -> Matrix {
        let means = self.column_means();
        let mut out = self.clone();
        for i in 0..out.rows {
            for (v, m) in out.row_mut(i).iter_mut().zip(&means) {
                *v -= m;
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum::<f64>())
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Matrix {
        Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }

    /// First non-finite entry, if any.
    pub fn find_non_finite(&self) -> Option<(usize, usize)> {
        let cols = self.cols.max(1);
        self.data.iter().position(|v| !v.is_finite()).map(|p| (p / cols, p % cols))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            other => Err(Error::UnsupportedDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Values {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl Values {
    pub fn len(&self) -> usize {
        match self {
            Values::F32(v) => v.len(),
            Values::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn position_non_finite(&self) -> Option<usize> {
        match self {
            Values::F32(v) => v.iter().position(|x| !x.is_finite()),
            Values::F64(v) => v.iter().position(|x| !x.is_finite()),
        }
    }
}

/// Shape and precision from the first [`HEADER_LEN`] bytes of a container.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub rows: usize,
    pub cols: usize,
    pub dtype: Dtype,
}

impl Header {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated { expected: HEADER_LEN, found: bytes.len() });
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        if bytes[4] != VERSION {
            return Err(Error::UnsupportedVersion(bytes[4]));
        }
        let dtype = Dtype::from_code(bytes[5])?;
        let rows = read_u64(&bytes[8..16])?;
        let cols = read_u64(&bytes[16..24])?;
        rows.checked_mul(cols)
            .and_then(|n| n.checked_mul(dtype.size()))
            .ok_or_else(|| Error::Shape(format!("header dimensions {rows}x{cols} overflow")))?;
        Ok(Self { rows, cols, dtype })
    }

    /// Payload bytes that must follow the header.
    pub fn payload_len(&self) -> usize {
        self.rows * self.cols * self.dtype.size()
    }
}

/// Validated `rows × cols` matrix in its stored precision.
///
/// Construction enforces `rows ≥ 1`, `cols ≥ 1`, matching payload length and
/// finiteness, so any value of this type is safe to feed to the estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixContainer {
    rows: usize,
    cols: usize,
    values: Values,
}

impl MatrixContainer {
    pub fn new(rows: usize, cols: usize, values: Values) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("container must be at least 1x1, got {rows}x{cols}")));
        }
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} container needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(p) = values.position_non_finite() {
            return Err(Error::NonFinite { row: p / cols, col: p % cols });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_f64(m: &Matrix) -> Result<Self> {
        Self::new(m.rows(), m.cols(), Values::F64(m.as_slice().to_vec()))
    }

    /// Narrowing copy; values outside the `f32` range become infinite and are rejected.
    pub fn from_f32(m: &Matrix) -> Result<Self> {
        Self::new(m.rows(), m.cols(), Values::F32(m.as_slice().iter().map(|&v| v as f32).collect()))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dtype(&self) -> Dtype {
        match self.values {
            Values::F32(_) => Dtype::F32,
            Values::F64(_) => Dtype::F64,
        }
    }

    pub fn values(&self) -> &Values {
        &self.values
    }

    /// Widens to the `f64` working type. Exact for both dtypes.
    pub fn to_matrix(&self) -> Matrix {
        let data = match &self.values {
            Values::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            Values::F64(v) => v.clone(),
        };
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.rows * self.cols * self.dtype().size()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.dtype().code());
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.cols as u64).to_le_bytes());
        match &self.values {
            Values::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Values::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let Header { rows, cols, dtype } = Header::parse(bytes)?;
        let expected = rows * cols * dtype.size();
        let payload = &bytes[HEADER_LEN..];
        if payload.len() < expected {
            return Err(Error::Truncated { expected, found: payload.len() });
        }
        if payload.len() > expected {
            return Err(Error::TrailingBytes(payload.len() - expected));
        }
        let values = match dtype {
            Dtype::F32 => Values::F32(
                payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
            ),
            Dtype::F64 => Values::F64(
                payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            ),
        };
        Self::new(rows, cols, values)
    }
}

fn read_u64(b: &[u8]) -> Result<usize> {
    let v = u64::from_le_bytes(b.try_into().unwrap());
    usize::try_from(v).map_err(|_| Error::Shape(format!("dimension {v} exceeds address space")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn two_by_three_f64_is_72_bytes() {
        let m = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let c = MatrixContainer::from_f64(&m).unwrap();
        let bytes = c.to_bytes();
        assert_eq!(bytes.len(), HEADER_LEN + 48);
        assert_eq!(bytes.len(), 72);
        assert_eq!(&bytes[0..4], b"LMRX");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 1);
        assert_eq!(&bytes[6..8], &[0, 0]);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 3);
        assert_eq!(f64::from_le_bytes(bytes[24..32].try_into().unwrap()), 1.0);
        assert_eq!(MatrixContainer::from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn one_by_one_f32_is_28_bytes() {
        let c = MatrixContainer::new(1, 1, Values::F32(vec![0.0])).unwrap();
        assert_eq!(c.to_bytes().len(), 28);
        assert_eq!(c.to_bytes()[5], 0);
    }

    #[test]
    fn nan_is_rejected_with_coordinates() {
        let err = MatrixContainer::new(2, 2, Values::F64(vec![0.0, 1.0, f64::NAN, 2.0])).unwrap_err();
        assert_eq!(err, Error::NonFinite { row: 1, col: 0 });
        let err = MatrixContainer::new(1, 2, Values::F32(vec![f32::INFINITY, 0.0])).unwrap_err();
        assert_eq!(err, Error::NonFinite { row: 0, col: 0 });
    }

    #[test]
    fn bad_magic() {
        let m = MatrixContainer::new(1, 1, Values::F64(vec![1.0])).unwrap();
        let mut bytes = m.to_bytes();
        bytes[0..4].copy_from_slice(b"XXXX");
        assert_eq!(MatrixContainer::from_bytes(&bytes), Err(Error::BadMagic(*b"XXXX")));
    }

    #[test]
    fn truncated_payload() {
        let m = Matrix::zeros(10, 10);
        let bytes = MatrixContainer::from_f64(&m).unwrap().to_bytes();
        let cut = &bytes[..HEADER_LEN + 50 * 8];
        assert_eq!(
            MatrixContainer::from_bytes(cut),
            Err(Error::Truncated { expected: 800, found: 400 })
        );
    }

    #[test]
    fn unsupported_dtype_and_version() {
        let m = MatrixContainer::new(1, 1, Values::F64(vec![1.0])).unwrap();
        let mut bytes = m.to_bytes();
        bytes[5] = 7;
        assert_eq!(MatrixContainer::from_bytes(&bytes), Err(Error::UnsupportedDtype(7)));
        bytes[5] = 1;
        bytes[4] = 2;
        assert_eq!(MatrixContainer::from_bytes(&bytes), Err(Error::UnsupportedVersion(2)));
    }

    #[test]
    fn non_finite_payload_rejected_on_decode() {
        let m = MatrixContainer::new(1, 2, Values::F64(vec![1.0, 2.0])).unwrap();
        let mut bytes = m.to_bytes();
        bytes[32..40].copy_from_slice(&f64::NAN.to_le_bytes());
        assert_eq!(MatrixContainer::from_bytes(&bytes), Err(Error::NonFinite { row: 0, col: 1 }));
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(MatrixContainer::new(0, 3, Values::F64(vec![])).is_err());
    }
}
