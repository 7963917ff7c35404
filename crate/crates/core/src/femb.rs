//! FEMB: the on-disk format for dense `f32` matrices.
//!
//! Layout (little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "FEMB"
//! 4       4     version (u32) = 1
//! 8       8     rows (u64)
//! 16      8     cols (u64)
//! 24      1     dtype (u8) = 1 for f32
//! 25      7     reserved, all 0x00
//! 32      ...   rows * cols f32, row-major
//! ```

use std::fs;
use std::path::Path;

use crate::data::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::report::write_atomic;

pub const MAGIC: &[u8; 4] = b"FEMB";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 1;
pub const HEADER_LEN: usize = 32;

pub fn encode(m: &Matrix<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + m.as_slice().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    out.push(DTYPE_F32);
    out.extend_from_slice(&[0u8; 7]);
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Matrix<f32>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let dtype = bytes[24];
    if dtype != DTYPE_F32 {
        return Err(Error::Format(format!("unsupported dtype {dtype}")));
    }
    if bytes[25..32].iter().any(|&b| b != 0) {
        return Err(Error::Format("reserved header bytes are not zero".into()));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::Format(format!("degenerate shape {rows}x{cols}")));
    }
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format(format!("shape {rows}x{cols} overflows")))?;
    let actual = (bytes.len() - HEADER_LEN) as u64;
    if actual != expected {
        return Err(Error::Truncation { expected, actual });
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Matrix::new(rows as usize, cols as usize, data)
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write_matrix(path: impl AsRef<Path>, m: &Matrix<f32>) -> Result<()> {
    write_atomic(path, &encode(m))
}

/// Read an embedding file. The result is not flagged as normalized.
pub fn read_embedding_file(path: impl AsRef<Path>) -> Result<EmbeddingMatrix<f32>> {
    EmbeddingMatrix::from_raw(read_matrix(path)?)
}

pub fn write_embedding_file(path: impl AsRef<Path>, m: &EmbeddingMatrix<f32>) -> Result<()> {
    write_matrix(path, m.matrix())
}
