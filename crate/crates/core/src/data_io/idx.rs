use std::path::Path;

use crate::error::{Error, Result};

const MAGIC_IMAGES: u32 = 0x0000_0803;
const MAGIC_LABELS: u32 = 0x0000_0801;

/// Unsigned byte tensor decoded from an IDX file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxTensor {
    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    /// Number of items along the leading dimension.
    pub fn len(&self) -> usize {
        self.dims.first().copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements per item (product of the trailing dimensions).
    pub fn item_size(&self) -> usize {
        self.dims.iter().skip(1).product()
    }

    pub fn item(&self, index: usize) -> &[u8] {
        let n = self.item_size();
        &self.data[index * n..(index + 1) * n]
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Truncated { expected: at + 4, found: bytes.len() })
}

/// Parses an unsigned-byte IDX container (rank-3 images or rank-1 labels).
pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    let magic = be_u32(bytes, 0)?;
    let rank = match magic {
        MAGIC_IMAGES => 3,
        MAGIC_LABELS => 1,
        other => return Err(Error::BadMagic(other)),
    };
    let dims = (0..rank)
        .map(|d| be_u32(bytes, 4 + 4 * d).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * rank;
    let payload: usize = dims.iter().product();
    let expected = header + payload;
    if bytes.len() < expected {
        return Err(Error::Truncated { expected, found: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(Error::TrailingBytes(bytes.len() - expected));
    }
    Ok(IdxTensor { dims, data: bytes[header..].to_vec() })
}

pub fn read_idx(path: impl AsRef<Path>) -> Result<IdxTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes)
}
