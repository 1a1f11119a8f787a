//! The `.mamc` container: named `f32` arrays plus a JSON metadata record.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "MAMC"
//! 4       2     format version (currently 1)
//! 6       2     reserved, zero
//! 8       8     header length H in bytes
//! 16      H     UTF-8 JSON header {"metadata": {...}, "arrays": [{"name", "dtype", "shape", "offset", "len"}]}
//! 16+H    P     array payload, f32 values back to back; `offset`/`len` count elements
//! 16+H+P  32    SHA-256 of every preceding byte
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Shape;

pub const MAGIC: &[u8; 4] = b"MAMC";
pub const VERSION: u16 = 1;
const PREAMBLE: usize = 16;
const DIGEST: usize = 32;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct ArrayEntry {
    name: String,
    dtype: String,
    shape: [usize; 4],
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    metadata: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

/// Decoded container contents.
#[derive(Debug, Clone)]
pub struct Container {
    pub metadata: serde_json::Value,
    pub arrays: ParamStore,
}

pub fn to_bytes(metadata: &serde_json::Value, arrays: &ParamStore) -> Vec<u8> {
    let mut entries = Vec::with_capacity(arrays.len());
    let mut offset = 0;
    for id in arrays.ids() {
        let s = arrays.shape(id);
        let len = s.numel();
        entries.push(ArrayEntry {
            name: arrays.name(id).to_string(),
            dtype: "f32".into(),
            shape: [s.n, s.c, s.h, s.w],
            offset,
            len,
        });
        offset += len;
    }
    let header = serde_json::to_vec(&Header {
        metadata: metadata.clone(),
        arrays: entries,
    })
    .expect("header serializes");

    let mut out = Vec::with_capacity(PREAMBLE + header.len() + offset * 4 + DIGEST);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for id in arrays.ids() {
        for v in arrays.values(id) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Container> {
    if bytes.len() < PREAMBLE + DIGEST {
        return Err(Error::integrity("length", format!("{} bytes is too short", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::integrity("magic", "not a .mamc container"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::integrity(
            "version",
            format!("container version {version}, this build reads {VERSION}"),
        ));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::integrity("checksum", "content digest mismatch (truncated or corrupt)"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let header_end = PREAMBLE
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| Error::integrity("header_len", "header runs past end of file"))?;
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end])
        .map_err(|e| Error::integrity("header", e.to_string()))?;
    let payload = &body[header_end..];
    let total: usize = header.arrays.iter().map(|a| a.len).sum();
    if payload.len() != total * 4 {
        return Err(Error::integrity(
            "payload",
            format!("expected {} bytes, found {}", total * 4, payload.len()),
        ));
    }
    let mut store = ParamStore::new();
    for a in &header.arrays {
        if a.dtype != "f32" {
            return Err(Error::integrity(format!("arrays.{}.dtype", a.name), format!("unsupported dtype {}", a.dtype)));
        }
        let shape = Shape::new(a.shape[0], a.shape[1], a.shape[2], a.shape[3]);
        if shape.numel() != a.len || a.offset + a.len > total {
            return Err(Error::integrity(format!("arrays.{}.shape", a.name), "shape, offset and length disagree"));
        }
        let raw = &payload[a.offset * 4..(a.offset + a.len) * 4];
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        store.add(a.name.clone(), shape, values);
    }
    Ok(Container {
        metadata: header.metadata,
        arrays: store,
    })
}

pub fn write(path: impl AsRef<Path>, metadata: &serde_json::Value, arrays: &ParamStore) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, to_bytes(metadata, arrays)).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<Container> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
