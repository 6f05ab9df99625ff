//! Binary model archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"HRBMARC\0"            8-byte magic
//! u32                     format version (1)
//! u64                     header length H
//! H bytes                 JSON header: kind, dims, beta bits, matrix directory, metadata
//! payload                 each matrix in directory order, row-major f64
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

const MAGIC: &[u8; 8] = b"HRBMARC\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Hopfield,
    Rbm,
    Poe,
}

/// A named dense matrix stored row-major.
#[derive(Debug, Clone)]
pub struct MatrixEntry {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixEntry {
    pub fn from_matrix<T: Real>(m: &DMatrix<T>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push(m[(r, c)].as_f64());
            }
        }
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }

    pub fn to_matrix<T: Real>(&self) -> DMatrix<T> {
        DMatrix::from_fn(self.rows, self.cols, |r, c| T::lit(self.data[r * self.cols + c]))
    }
}

impl PartialEq for MatrixEntry {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Serializable snapshot of a model: kind, dimensions, inverse temperature,
/// named matrices and free-form creation metadata.
#[derive(Debug, Clone)]
pub struct ModelArchive {
    pub kind: ModelKind,
    pub n: usize,
    pub p: usize,
    pub beta: f64,
    pub matrices: BTreeMap<String, MatrixEntry>,
    pub metadata: BTreeMap<String, String>,
}

impl PartialEq for ModelArchive {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.n == other.n
            && self.p == other.p
            && self.beta.to_bits() == other.beta.to_bits()
            && self.matrices == other.matrices
            && self.metadata == other.metadata
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    n: usize,
    p: usize,
    beta_bits: u64,
    matrices: Vec<DirEntry>,
    metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct DirEntry {
    name: String,
    rows: usize,
    cols: usize,
}

impl ModelArchive {
    pub fn new(kind: ModelKind, n: usize, p: usize, beta: f64) -> Self {
        Self { kind, n, p, beta, matrices: BTreeMap::new(), metadata: BTreeMap::new() }
    }

    pub fn with_matrix<T: Real>(mut self, name: &str, m: &DMatrix<T>) -> Self {
        self.insert_matrix(name, m);
        self
    }

    pub fn insert_matrix<T: Real>(&mut self, name: &str, m: &DMatrix<T>) {
        self.matrices.insert(name.to_string(), MatrixEntry::from_matrix(m));
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    pub fn matrix<T: Real>(&self, name: &str) -> Result<DMatrix<T>> {
        self.matrices
            .get(name)
            .map(MatrixEntry::to_matrix)
            .ok_or_else(|| Error::SchemaMismatch(format!("archive has no matrix named {name:?}")))
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    /// Checks declared dimensions against the stored matrix shapes.
    pub fn validate(&self) -> Result<()> {
        let expect = |name: &str, rows: usize, cols: usize| -> Result<()> {
            match self.matrices.get(name) {
                Some(m) if (m.rows, m.cols) != (rows, cols) => Err(Error::SchemaMismatch(format!(
                    "matrix {name} is {}x{}, expected {rows}x{cols}",
                    m.rows, m.cols
                ))),
                _ => Ok(()),
            }
        };
        let require = |name: &str| -> Result<()> {
            if self.matrices.contains_key(name) {
                Ok(())
            } else {
                Err(Error::SchemaMismatch(format!("{:?} archive lacks matrix {name}", self.kind)))
            }
        };
        for (name, m) in &self.matrices {
            if m.data.len() != m.rows * m.cols {
                return Err(Error::SchemaMismatch(format!("matrix {name} has inconsistent data length")));
            }
        }
        match self.kind {
            ModelKind::Hopfield => require("J")?,
            ModelKind::Rbm => require("W")?,
            ModelKind::Poe => require("W0")?,
        }
        expect("J", self.n, self.n)?;
        expect("W", self.n, self.p)?;
        expect("xi", self.n, self.p)?;
        expect("b", self.n, 1)?;
        expect("c", self.p, 1)?;
        for (name, m) in &self.matrices {
            let expert = name.strip_prefix('W').is_some_and(|r| !r.is_empty() && r.bytes().all(|b| b.is_ascii_digit()));
            if expert && (m.rows, m.cols) != (self.n, self.p) {
                return Err(Error::SchemaMismatch(format!("expert matrix {name} is not {}x{}", self.n, self.p)));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let header = Header {
            kind: self.kind,
            n: self.n,
            p: self.p,
            beta_bits: self.beta.to_bits(),
            matrices: self
                .matrices
                .iter()
                .map(|(name, m)| DirEntry { name: name.clone(), rows: m.rows, cols: m.cols })
                .collect(),
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::SchemaMismatch(e.to_string()))?;
        let payload: usize = self.matrices.values().map(|m| m.data.len() * 8).sum();
        let mut out = Vec::with_capacity(20 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for m in self.matrices.values() {
            for v in &m.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::SchemaMismatch(msg.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing archive magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::SchemaMismatch(format!("unsupported archive version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..).ok_or_else(|| bad("truncated archive"))?;
        let json = body.get(..hlen).ok_or_else(|| bad("truncated archive header"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| Error::SchemaMismatch(e.to_string()))?;
        let mut payload = &body[hlen..];
        let mut matrices = BTreeMap::new();
        for entry in header.matrices {
            let count = entry.rows.checked_mul(entry.cols).ok_or_else(|| bad("matrix size overflow"))?;
            let nbytes = count.checked_mul(8).ok_or_else(|| bad("matrix size overflow"))?;
            if payload.len() < nbytes {
                return Err(bad("truncated archive payload"));
            }
            let data = payload[..nbytes]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            payload = &payload[nbytes..];
            matrices.insert(entry.name, MatrixEntry { rows: entry.rows, cols: entry.cols, data });
        }
        if !payload.is_empty() {
            return Err(bad("archive has trailing bytes"));
        }
        let archive = Self {
            kind: header.kind,
            n: header.n,
            p: header.p,
            beta: f64::from_bits(header.beta_bits),
            matrices,
            metadata: header.metadata,
        };
        archive.validate()?;
        Ok(archive)
    }
}

pub fn save_model(archive: &ModelArchive, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = archive.to_bytes()?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelArchive> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelArchive::from_bytes(&bytes)
}
