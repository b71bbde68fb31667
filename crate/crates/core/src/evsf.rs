//! EVSF: a minimal container for dense float64 arrays.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size      | content                         |
//! |--------|-----------|---------------------------------|
//! | 0      | 4         | magic `b"EVSF"`                 |
//! | 4      | 1         | version, `1`                    |
//! | 5      | 1         | dtype, `1` = float64 LE         |
//! | 6      | 2         | reserved, zero                  |
//! | 8      | 1         | `ndim`                          |
//! | 9      | 4·ndim    | dims as `u32`                   |
//! | 9+4·ndim | 8·∏dims | row-major payload              |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{FrameField, Grid3, HeightField, ScalarField3, VectorField3, Volume4};

pub const MAGIC: [u8; 4] = *b"EVSF";
pub const VERSION: u8 = 1;
pub const DTYPE_F64: u8 = 1;

pub fn header_len(ndim: usize) -> usize {
    9 + 4 * ndim
}

pub fn encode(dims: &[usize], values: &[f64]) -> Result<Vec<u8>> {
    let n: usize = dims.iter().product();
    if dims.is_empty() || dims.len() > u8::MAX as usize || n != values.len() {
        return Err(Error::DimMismatch(format!(
            "dims {dims:?} do not describe {} values",
            values.len()
        )));
    }
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue(k));
    }
    let mut out = Vec::with_capacity(header_len(dims.len()) + 8 * n);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&[VERSION, DTYPE_F64, 0, 0, dims.len() as u8]);
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::DimMismatch(format!("dim {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f64>)> {
    if bytes.len() < 9 {
        let mut found = [0u8; 4];
        let k = bytes.len().min(4);
        found[..k].copy_from_slice(&bytes[..k]);
        if found != MAGIC {
            return Err(Error::BadMagic { found });
        }
        return Err(Error::TruncatedPayload {
            expected: 9,
            found: bytes.len(),
        });
    }
    let found: [u8; 4] = bytes[0..4].try_into().unwrap();
    if found != MAGIC {
        return Err(Error::BadMagic { found });
    }
    if bytes[4] != VERSION {
        return Err(Error::UnsupportedVersion(bytes[4]));
    }
    if bytes[5] != DTYPE_F64 {
        return Err(Error::UnsupportedDtype(bytes[5]));
    }
    let ndim = bytes[8] as usize;
    let hlen = header_len(ndim);
    if bytes.len() < hlen {
        return Err(Error::TruncatedPayload {
            expected: hlen,
            found: bytes.len(),
        });
    }
    let dims: Vec<usize> = bytes[9..hlen]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let n: usize = dims.iter().product();
    let expected = hlen + 8 * n;
    if bytes.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::TrailingBytes(bytes.len() - expected));
    }
    let mut values = Vec::with_capacity(n);
    for (k, c) in bytes[hlen..].chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(c.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFiniteValue(k));
        }
        values.push(v);
    }
    Ok((dims, values))
}

pub fn write_evsf(path: impl AsRef<Path>, dims: &[usize], values: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(dims, values)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_evsf(path: impl AsRef<Path>) -> Result<(Vec<usize>, Vec<f64>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

// Typed helpers. 3D fields carry no spacing in the file; readers rebuild
// the unit-cube grid from the dims.

pub fn write_scalar(path: impl AsRef<Path>, f: &ScalarField3) -> Result<()> {
    write_evsf(path, &f.grid().dims(), f.values())
}

pub fn read_scalar(path: impl AsRef<Path>) -> Result<ScalarField3> {
    let (dims, values) = read_evsf(path)?;
    let grid = grid_from_dims(&dims, 3)?;
    ScalarField3::new(grid, values)
}

pub fn read_height(path: impl AsRef<Path>) -> Result<HeightField> {
    read_scalar(path).map(HeightField)
}

pub fn write_vector(path: impl AsRef<Path>, u: &VectorField3) -> Result<()> {
    let [n0, n1, n2] = u.grid().dims();
    write_evsf(path, &[n0, n1, n2, 3], &u.interleaved())
}

pub fn read_vector(path: impl AsRef<Path>) -> Result<VectorField3> {
    let (dims, values) = read_evsf(path)?;
    if dims.len() != 4 || dims[3] != 3 {
        return Err(Error::DimMismatch(format!("expected (n0, n1, n2, 3), got {dims:?}")));
    }
    let grid = grid_from_dims(&dims[..3], 3)?;
    VectorField3::from_interleaved(grid, &values)
}

pub fn write_frame_field(path: impl AsRef<Path>, w: &FrameField) -> Result<()> {
    let [n0, n1, n2] = w.grid().dims();
    write_evsf(path, &[n0, n1, n2, 2], &w.to_unknowns())
}

pub fn read_frame_field(path: impl AsRef<Path>) -> Result<FrameField> {
    let (dims, values) = read_evsf(path)?;
    if dims.len() != 4 || dims[3] != 2 {
        return Err(Error::DimMismatch(format!("expected (n0, n1, n2, 2), got {dims:?}")));
    }
    let grid = grid_from_dims(&dims[..3], 3)?;
    FrameField::from_unknowns(grid, &values)
}

pub fn write_volume(path: impl AsRef<Path>, v: &Volume4) -> Result<()> {
    write_evsf(path, &v.dims(), v.values())
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume4> {
    let (dims, values) = read_evsf(path)?;
    if dims.len() != 4 {
        return Err(Error::DimMismatch(format!("expected a 4D volume, got dims {dims:?}")));
    }
    Volume4::new([dims[0], dims[1], dims[2], dims[3]], values)
}

fn grid_from_dims(dims: &[usize], ndim: usize) -> Result<Grid3> {
    if dims.len() != ndim {
        return Err(Error::DimMismatch(format!("expected {ndim} dims, got {dims:?}")));
    }
    Grid3::unit_cube(dims[0], dims[1], dims[2])
}
