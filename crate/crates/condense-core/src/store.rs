//! Embedding stores: a dense matrix of row vectors keyed by string ids, plus
//! the on-disk format.
//!
//! File layout: magic `DCEMB1\0\0`, u32 LE version (1), u32 LE dimension,
//! u64 LE row count, `count × dimension` f32 LE row-major values, then one
//! id record per row (u16 LE byte length + UTF-8 bytes). Values are stored
//! as f32; in-memory math is f64.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub const EMBEDDING_MAGIC: &[u8; 8] = b"DCEMB1\0\0";
pub const EMBEDDING_VERSION: u32 = 1;

/// Dense embeddings with one row per id. Immutable after construction.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    ids: Vec<String>,
    matrix: DenseMatrix,
    by_id: HashMap<String, usize>,
}

impl EmbeddingStore {
    /// Build a store, validating that ids are unique, non-empty, and match
    /// the matrix row count. A store with zero rows is valid.
    pub fn new(ids: Vec<String>, matrix: DenseMatrix) -> Result<Self> {
        if ids.len() != matrix.rows() {
            return Err(Error::dimension("store ids", matrix.rows(), ids.len()));
        }
        if matrix.cols() == 0 {
            return Err(Error::format("embedding dimension must be positive"));
        }
        let mut by_id = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if id.is_empty() {
                return Err(Error::format(format!("row {i} has an empty id")));
            }
            if id.len() > u16::MAX as usize {
                return Err(Error::format(format!("id '{id}' exceeds 65535 bytes")));
            }
            if by_id.insert(id.clone(), i).is_some() {
                return Err(Error::format(format!("duplicate id '{id}'")));
            }
        }
        Ok(EmbeddingStore { ids, matrix, by_id })
    }

    pub fn dimension(&self) -> usize {
        self.matrix.cols()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, row: usize) -> &str {
        &self.ids[row]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        self.matrix.row(row)
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    /// Row index of an id, if present.
    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    /// Row vector of an id, or `MissingKey`.
    pub fn vector(&self, id: &str) -> Result<&[f64]> {
        self.position(id)
            .map(|i| self.row(i))
            .ok_or_else(|| Error::MissingKey(id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids
            .iter()
            .enumerate()
            .map(move |(i, id)| (id.as_str(), self.row(i)))
    }

    /// Serialize to the `DCEMB1` format. Values are narrowed to f32.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(EMBEDDING_MAGIC)?;
        w.write_all(&EMBEDDING_VERSION.to_le_bytes())?;
        w.write_all(&(self.dimension() as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.dimension() * 4);
        for i in 0..self.len() {
            buf.clear();
            for &v in self.row(i) {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        for id in &self.ids {
            w.write_all(&(id.len() as u16).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a `DCEMB1` file, validating the header, UTF-8 ids and finite
    /// values.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != EMBEDDING_MAGIC {
            return Err(Error::format("bad magic: not an embedding file"));
        }
        let version = read_u32(&mut r, "version")?;
        if version != EMBEDDING_VERSION {
            return Err(Error::format(format!(
                "unsupported embedding file version {version}"
            )));
        }
        let dim = read_u32(&mut r, "dimension")? as usize;
        if dim == 0 {
            return Err(Error::format("embedding dimension is zero"));
        }
        let count = read_u64(&mut r, "count")? as usize;
        let mut values = vec![0.0f64; count * dim];
        let mut row_bytes = vec![0u8; dim * 4];
        for row in 0..count {
            read_exact(&mut r, &mut row_bytes, "embedding payload")?;
            for (j, chunk) in row_bytes.chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes(chunk.try_into().unwrap());
                if !v.is_finite() {
                    return Err(Error::format(format!(
                        "non-finite value at row {row}, column {j}"
                    )));
                }
                values[row * dim + j] = v as f64;
            }
        }
        let mut ids = Vec::with_capacity(count);
        for row in 0..count {
            let len = read_u16(&mut r, "id length")? as usize;
            let mut bytes = vec![0u8; len];
            read_exact(&mut r, &mut bytes, "id bytes")?;
            let id = String::from_utf8(bytes)
                .map_err(|_| Error::format(format!("id for row {row} is not UTF-8")))?;
            ids.push(id);
        }
        let matrix = DenseMatrix::from_vec(count, dim, values)?;
        EmbeddingStore::new(ids, matrix)
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::format(format!("truncated file while reading {what}")))
}

fn read_u16(r: &mut impl Read, what: &str) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b, what)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}
