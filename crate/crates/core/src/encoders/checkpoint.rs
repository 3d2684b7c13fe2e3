//! Flat binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset 0   8 bytes   magic "ACLIPCK1"
//! offset 8   8 bytes   u64 header length H
//! offset 16  H bytes   UTF-8 JSON header
//! offset 16+H          data section
//! ```
//!
//! The header is `{"tensors": [{"name", "shape", "dtype", "offset",
//! "nbytes"}, ...], "meta": {...}}`. `offset` is relative to the start of the
//! data section; `dtype` is `"float64"` or `"float32"`. Arrays are stored
//! row-major, back to back, in header order. `float64` arrays round-trip
//! bit-exactly.

use std::path::Path;

use indexmap::IndexMap;
use ndgrad::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{AclipError, Result};

pub const MAGIC: &[u8; 8] = b"ACLIPCK1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Float32,
    Float64,
}

impl DType {
    fn size(self) -> usize {
        match self {
            DType::Float32 => 4,
            DType::Float64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    dtype: DType,
    offset: usize,
    nbytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    tensors: Vec<Entry>,
    meta: serde_json::Value,
}

/// Named tensors plus free-form JSON metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: IndexMap<String, Tensor>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn to_bytes(&self, dtype: DType) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for (name, t) in &self.tensors {
            let nbytes = t.numel() * dtype.size();
            entries.push(Entry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                dtype,
                offset,
                nbytes,
            });
            offset += nbytes;
        }
        let header = serde_json::to_vec(&Header {
            tensors: entries,
            meta: self.meta.clone(),
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.tensors.values() {
            for &v in t.data() {
                match dtype {
                    DType::Float64 => out.extend_from_slice(&v.to_le_bytes()),
                    DType::Float32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |offset: usize, detail: &str| AclipError::Format {
            offset,
            detail: detail.to_string(),
        };
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(fail(0, "missing checkpoint magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let data_start = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| fail(8, "header length exceeds file"))?;
        let header: Header = serde_json::from_slice(&bytes[16..data_start])?;
        let data = &bytes[data_start..];
        let mut tensors = IndexMap::with_capacity(header.tensors.len());
        for e in header.tensors {
            let numel: usize = e.shape.iter().product();
            if e.nbytes != numel * e.dtype.size() {
                return Err(fail(data_start + e.offset, &format!("{}: size mismatch", e.name)));
            }
            let chunk = data
                .get(e.offset..e.offset + e.nbytes)
                .ok_or_else(|| fail(data_start + e.offset, &format!("{}: truncated data", e.name)))?;
            let values = match e.dtype {
                DType::Float64 => chunk
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
                DType::Float32 => chunk
                    .chunks_exact(4)
                    .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                    .collect(),
            };
            tensors.insert(e.name, Tensor::new(&e.shape, values)?);
        }
        Ok(Self {
            tensors,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| AclipError::io(dir, e))?;
        }
        let bytes = self.to_bytes(DType::Float64)?;
        std::fs::write(path, bytes).map_err(|e| AclipError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| AclipError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
