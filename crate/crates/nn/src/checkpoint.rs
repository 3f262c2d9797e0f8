//! Self-describing model archives.
//!
//! Layout: the 8-byte magic `FSEGCKPT`, a little-endian `u32` format version, a `u64` header
//! length, a JSON header (architecture, tensor names and shapes, free-form metadata) and
//! then every parameter and buffer as little-endian `f64` in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{BackboneConfig, FusionConfig};
use crate::error::{Error, Result};
use crate::model::SegModel;
use crate::params::Named;

const MAGIC: &[u8; 8] = b"FSEGCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    backbone: BackboneConfig,
    fusion: FusionConfig,
    params: Vec<TensorEntry>,
    buffers: Vec<TensorEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

fn entries(list: &[Named]) -> Vec<TensorEntry> {
    list.iter()
        .map(|n| TensorEntry {
            name: n.name.clone(),
            shape: n.value.shape().to_vec(),
        })
        .collect()
}

/// Serializes the model and `meta` into checkpoint bytes.
pub fn to_bytes(model: &SegModel, meta: &serde_json::Value) -> Vec<u8> {
    let store = model.store();
    let header = Header {
        backbone: *model.backbone(),
        fusion: *model.fusion(),
        params: entries(&store.params),
        buffers: entries(&store.buffers),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let scalars: usize = store.params.iter().chain(&store.buffers).map(|n| n.value.len()).sum();
    let mut out = Vec::with_capacity(20 + json.len() + 8 * scalars);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for n in store.params.iter().chain(&store.buffers) {
        for v in n.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Rebuilds a model from checkpoint bytes; `origin` only labels errors.
pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<(SegModel, serde_json::Value)> {
    let bad = |reason: String| Error::Checkpoint {
        path: origin.to_path_buf(),
        reason,
    };
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(20..20usize.saturating_add(hlen))
        .ok_or_else(|| bad("truncated header".into()))?;
    let header: Header =
        serde_json::from_slice(body).map_err(|e| bad(format!("malformed header: {e}")))?;
    let mut model = SegModel::build(&header.backbone, &header.fusion, 0)
        .map_err(|e| bad(format!("architecture: {e}")))?;
    let mut payload = &bytes[20 + hlen..];
    let store = model.store_mut();
    for (list, want) in [(&mut store.params, &header.params), (&mut store.buffers, &header.buffers)] {
        if list.len() != want.len() {
            return Err(bad(format!(
                "{} tensors recorded, architecture has {}",
                want.len(),
                list.len()
            )));
        }
        for (n, e) in list.iter_mut().zip(want) {
            if n.name != e.name || n.value.shape() != e.shape.as_slice() {
                return Err(bad(format!(
                    "tensor {} {:?} does not match {} {:?}",
                    e.name,
                    e.shape,
                    n.name,
                    n.value.shape()
                )));
            }
            let need = 8 * n.value.len();
            if payload.len() < need {
                return Err(bad("truncated tensor data".into()));
            }
            for (v, c) in n.value.data_mut().iter_mut().zip(payload[..need].chunks_exact(8)) {
                *v = f64::from_le_bytes(c.try_into().expect("8 bytes"));
            }
            payload = &payload[need..];
        }
    }
    if !payload.is_empty() {
        return Err(bad(format!("{} trailing bytes", payload.len())));
    }
    Ok((model, header.meta))
}

pub fn save_checkpoint(model: &SegModel, meta: &serde_json::Value, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model, meta)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<(SegModel, serde_json::Value)> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_bytes(&bytes, path)
}

/// Hex SHA-256 of the parameters and buffers (names, shapes and values).
pub fn parameter_digest(model: &SegModel) -> String {
    let mut h = Sha256::new();
    let store = model.store();
    for n in store.params.iter().chain(&store.buffers) {
        h.update(n.name.as_bytes());
        for d in n.value.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in n.value.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
