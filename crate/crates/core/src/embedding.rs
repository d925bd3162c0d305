//! Entity embedding matrices and the `GCSE` binary file format.
//!
//! Layout (all little-endian):
//!
//! ```text
//! offset  size        field
//! 0       4           magic "GCSE"
//! 4       4           u32 format version (1)
//! 8       8           u64 row count
//! 16      4           u32 dimension
//! 20      4*rows*dim  f32 values, row-major
//! ```
//!
//! Values are held as `f64` in memory and narrowed to `f32` on save.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const MAGIC: &[u8; 4] = b"GCSE";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

/// Row `i` is the representation of node `i`. All values are finite.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix(Matrix);

impl EmbeddingMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if let Some(pos) = m.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "embedding matrix",
                node: pos / m.cols().max(1),
            });
        }
        Ok(Self(m))
    }

    pub fn from_rows(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::Shape {
                context: "embedding data",
                expected: rows * dim,
                found: data.len(),
            });
        }
        Self::new(Matrix::from_vec(rows, dim, data))
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// Rows selected by `ids`, in that order.
    pub fn select_rows(&self, ids: &[usize]) -> EmbeddingMatrix {
        let d = self.dim();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(self.row(i));
        }
        EmbeddingMatrix(Matrix::from_vec(ids.len(), d, data))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.0.as_slice().len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows() as u64).to_le_bytes());
        let dim = u32::try_from(self.dim())
            .map_err(|_| Error::Format(format!("dimension {} exceeds u32", self.dim())))?;
        out.extend_from_slice(&dim.to_le_bytes());
        for (k, &v) in self.0.as_slice().iter().enumerate() {
            let f = v as f32;
            if !f.is_finite() {
                return Err(Error::NonFinite {
                    context: "embedding value at f32 precision",
                    node: k / self.dim().max(1),
                });
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "truncated header: {} of {HEADER_LEN} bytes",
                bytes.len()
            )));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", &bytes[0..4])));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let dim = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as u64;
        let expected = rows
            .checked_mul(dim)
            .and_then(|c| c.checked_mul(4))
            .and_then(|c| c.checked_add(HEADER_LEN as u64))
            .ok_or_else(|| Error::Format(format!("header size overflow ({rows}x{dim})")))?;
        if bytes.len() as u64 != expected {
            return Err(Error::Format(format!(
                "truncated or oversized payload: {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let (rows, dim) = (rows as usize, dim as usize);
        let data: Vec<f64> = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Self::from_rows(rows, dim, data)
    }
}

pub fn save_embeddings(m: &EmbeddingMatrix, path: &Path) -> Result<()> {
    let bytes = m.to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingMatrix::from_bytes(&bytes)
}
