// SPDX-License-Identifier: MIT OR Apache-2.0

//! Reading and writing matrix files.
//!
//! The native format is the `LMRX` container from [`layergeom_core::matrix`].
//! Files starting with the `.npy` magic are accepted on read as long as they
//! hold a little-endian `f4`/`f8` array in C order with one or two dimensions.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use layergeom_core::{Dtype, Header, Matrix, MatrixContainer, Values};

use crate::error::{Error, Result};

const NPY_MAGIC: &[u8; 6] = b"\x93NUMPY";

/// Reads and validates a container (or `.npy`) file.
pub fn read_container(path: impl AsRef<Path>) -> Result<MatrixContainer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse(&bytes).map_err(|e| e.in_file(path))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    Ok(read_container(path)?.to_matrix())
}

/// Shape and dtype without reading the payload.
pub fn read_header(path: impl AsRef<Path>) -> Result<Header> {
    let path = path.as_ref();
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = Vec::with_capacity(256);
    (&mut file).take(NPY_PREFIX_MAX).read_to_end(&mut head).map_err(|e| Error::io(path, e))?;
    let header = if head.starts_with(NPY_MAGIC) {
        npy_header(&head).map(|(h, _)| h)
    } else {
        Header::parse(&head).map_err(Error::from)
    };
    header.map_err(|e| e.in_file(path))
}

/// Writes a container through a temporary file and a rename, so readers never see partial files.
pub fn write_container(path: impl AsRef<Path>, m: &MatrixContainer) -> Result<()> {
    write_atomic(path.as_ref(), &m.to_bytes())
}

pub fn write_matrix(path: impl AsRef<Path>, m: &Matrix, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    let c = match dtype {
        Dtype::F32 => MatrixContainer::from_f32(m),
        Dtype::F64 => MatrixContainer::from_f64(m),
    }
    .map_err(|e| Error::from(e).in_file(path))?;
    write_container(path, &c)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

fn parse(bytes: &[u8]) -> Result<MatrixContainer> {
    if bytes.starts_with(NPY_MAGIC) {
        read_npy(bytes)
    } else {
        Ok(MatrixContainer::from_bytes(bytes)?)
    }
}

// magic + version + 4-byte length + a generous dictionary
const NPY_PREFIX_MAX: u64 = 4096;

/// Header of an `.npy` file and the offset of its payload.
fn npy_header(bytes: &[u8]) -> Result<(Header, usize)> {
    if bytes.len() < 10 {
        return Err(Error::Npy("file shorter than the preamble".into()));
    }
    let (len, start) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(Error::Npy("file shorter than the preamble".into()));
            }
            (u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize, 12)
        }
        v => return Err(Error::Npy(format!("format version {v} is not supported"))),
    };
    let dict = bytes
        .get(start..start + len)
        .ok_or_else(|| Error::Npy("header dictionary is truncated".into()))?;
    let dict = std::str::from_utf8(dict).map_err(|_| Error::Npy("header is not text".into()))?;

    let descr = dict_value(dict, "descr")?;
    let dtype = match descr.trim_matches(|c| c == '\'' || c == '"') {
        "<f4" => Dtype::F32,
        "<f8" => Dtype::F64,
        other => return Err(Error::Npy(format!("dtype {other} (need <f4 or <f8)"))),
    };
    if dict_value(dict, "fortran_order")? != "False" {
        return Err(Error::Npy("Fortran-ordered arrays are not supported".into()));
    }
    let shape = dict_value(dict, "shape")?;
    let dims: Vec<usize> = shape
        .trim_start_matches('(')
        .trim_end_matches(')')
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::Npy(format!("bad shape {shape}"))))
        .collect::<Result<_>>()?;
    let (rows, cols) = match dims[..] {
        [n] => (n, 1),
        [n, d] => (n, d),
        _ => return Err(Error::Npy(format!("{}-dimensional arrays are not supported", dims.len()))),
    };
    Ok((Header { rows, cols, dtype }, start + len))
}

/// Raw text of `'key': value` in a Python dict literal.
fn dict_value<'a>(dict: &'a str, key: &str) -> Result<&'a str> {
    let pat = format!("'{key}':");
    let at = dict.find(&pat).ok_or_else(|| Error::Npy(format!("header has no {key}")))?;
    let rest = dict[at + pat.len()..].trim_start();
    let end = if rest.starts_with('(') {
        rest.find(')').map(|i| i + 1)
    } else {
        rest.find([',', '}'])
    };
    Ok(rest[..end.unwrap_or(rest.len())].trim())
}

fn read_npy(bytes: &[u8]) -> Result<MatrixContainer> {
    let (h, offset) = npy_header(bytes)?;
    let payload = &bytes[offset..];
    if payload.len() != h.payload_len() {
        return Err(Error::Npy(format!(
            "payload is {} bytes, shape {}x{} needs {}",
            payload.len(),
            h.rows,
            h.cols,
            h.payload_len()
        )));
    }
    let values = match h.dtype {
        Dtype::F32 => Values::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
        Dtype::F64 => Values::F64(payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
    };
    Ok(MatrixContainer::new(h.rows, h.cols, values)?)
}
