//! Model checkpoint envelope shared by every predictor.
//!
//! A checkpoint is one line of JSON header followed by a blob of
//! little-endian `f64` values. The header lists each tensor's name and
//! shape, the blob length and its SHA-256, and model-specific metadata.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FORMAT: &str = "wifiloc-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    kind: String,
    tensors: Vec<TensorEntry>,
    blob_bytes: usize,
    sha256: String,
    meta: serde_json::Value,
}

/// Decoded checkpoint contents.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<(TensorEntry, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new(kind: &str, meta: serde_json::Value) -> Self {
        Checkpoint {
            kind: kind.to_string(),
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: &[f64]) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push((
            TensorEntry {
                name: name.into(),
                shape,
            },
            data.to_vec(),
        ));
    }

    /// Removes and returns the next tensor, checking its name.
    pub fn take(&mut self, name: &str) -> Result<Vec<f64>> {
        if self.tensors.is_empty() {
            return Err(Error::Checkpoint(format!("missing tensor {name}")));
        }
        let (entry, data) = self.tensors.remove(0);
        if entry.name != name {
            return Err(Error::Checkpoint(format!(
                "expected tensor {name}, found {}",
                entry.name
            )));
        }
        Ok(data)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut blob =
            Vec::with_capacity(8 * self.tensors.iter().map(|t| t.1.len()).sum::<usize>());
        for (_, data) in &self.tensors {
            for v in data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            format: FORMAT.to_string(),
            version: VERSION,
            kind: self.kind.clone(),
            tensors: self.tensors.iter().map(|t| t.0.clone()).collect(),
            blob_bytes: blob.len(),
            sha256: hex(&Sha256::digest(&blob)),
            meta: self.meta.clone(),
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checksum("header is truncated".into()))?;
        let header: Header = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| Error::Checkpoint(format!("unreadable header: {e}")))?;
        if header.format != FORMAT {
            return Err(Error::Checkpoint(format!(
                "not a checkpoint ({})",
                header.format
            )));
        }
        if header.version != VERSION {
            return Err(Error::Version {
                found: header.version,
                expected: VERSION,
            });
        }
        let blob = &bytes[nl + 1..];
        if blob.len() != header.blob_bytes {
            return Err(Error::Checksum(format!(
                "blob has {} bytes, header says {}",
                blob.len(),
                header.blob_bytes
            )));
        }
        if hex(&Sha256::digest(blob)) != header.sha256 {
            return Err(Error::Checksum(
                "SHA-256 of parameter blob does not match".into(),
            ));
        }
        let declared: usize = header.tensors.iter().map(TensorEntry::len).sum();
        if declared * 8 != blob.len() {
            return Err(Error::Checkpoint(
                "tensor shapes do not cover the blob".into(),
            ));
        }
        let mut values = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let tensors = header
            .tensors
            .into_iter()
            .map(|entry| {
                let data: Vec<f64> = values.by_ref().take(entry.len()).collect();
                (entry, data)
            })
            .collect();
        Ok(Checkpoint {
            kind: header.kind,
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
