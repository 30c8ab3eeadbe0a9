//! Binary checkpoint format.
//!
//! ```text
//! magic    8 bytes   "MIALM\0\0\x01"
//! hlen     u64 LE    length of the JSON header
//! header   hlen bytes {"version", "config", "tensors": [{name, shape, offset}]}
//! payload  f32 LE    tensors in manifest order; offsets are payload byte offsets
//! checksum u64 LE    FNV-1a 64 over the payload
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::layout::Layout;
use super::{LmConfig, LmError, LmModel};
use crate::corpus::digest64;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"MIALM\0\0\x01";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("not a model checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint truncated: {0}")]
    Truncated(&'static str),
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checksum mismatch: stored {stored:016x}, computed {computed:016x}")]
    Checksum { stored: u64, computed: u64 },
    #[error("tensor manifest does not match the configured architecture: {0}")]
    Manifest(String),
    #[error(transparent)]
    Config(#[from] LmError),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    config: LmConfig,
    tensors: Vec<ManifestEntry>,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

fn manifest(layout: &Layout) -> Vec<ManifestEntry> {
    layout
        .slots
        .iter()
        .map(|s| ManifestEntry {
            name: s.name.clone(),
            shape: s.shape.clone(),
            offset: s.offset * 4,
        })
        .collect()
}

pub fn checkpoint_bytes(model: &LmModel) -> Vec<u8> {
    let header = Header {
        version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        tensors: manifest(&model.layout),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let payload: Vec<u8> = model.params.iter().flat_map(|p| p.to_le_bytes()).collect();
    let mut out = Vec::with_capacity(8 + 8 + header.len() + payload.len() + 8);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&digest64(&payload).to_le_bytes());
    out
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<LmModel, CheckpointError> {
    if bytes.len() < 8 {
        return Err(CheckpointError::Truncated("magic"));
    }
    if bytes[..8] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let hlen = bytes
        .get(8..16)
        .ok_or(CheckpointError::Truncated("header length"))?;
    let hlen = u64::from_le_bytes(hlen.try_into().unwrap()) as usize;
    let header_end = 16usize
        .checked_add(hlen)
        .ok_or(CheckpointError::Truncated("header"))?;
    let header = bytes
        .get(16..header_end)
        .ok_or(CheckpointError::Truncated("header"))?;
    let header: serde_json::Value =
        serde_json::from_slice(header).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let found = header
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| CheckpointError::Header("missing version".into()))?;
    if found != u64::from(CHECKPOINT_VERSION) {
        return Err(CheckpointError::Version {
            found: found as u32,
            expected: CHECKPOINT_VERSION,
        });
    }
    let header: Header =
        serde_json::from_value(header).map_err(|e| CheckpointError::Header(e.to_string()))?;
    header.config.validate()?;

    let layout = Layout::new(&header.config);
    if header.tensors != manifest(&layout) {
        return Err(CheckpointError::Manifest(
            "names, shapes or offsets differ".into(),
        ));
    }
    let payload_len = layout.total * 4;
    let payload = bytes
        .get(header_end..header_end + payload_len)
        .ok_or(CheckpointError::Truncated("payload"))?;
    let stored = bytes
        .get(header_end + payload_len..header_end + payload_len + 8)
        .ok_or(CheckpointError::Truncated("checksum"))?;
    if bytes.len() != header_end + payload_len + 8 {
        return Err(CheckpointError::Header(
            "trailing bytes after checksum".into(),
        ));
    }
    let stored = u64::from_le_bytes(stored.try_into().unwrap());
    let computed = digest64(payload);
    if stored != computed {
        return Err(CheckpointError::Checksum { stored, computed });
    }
    let params = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(LmModel::from_params(header.config, params))
}

pub fn save_checkpoint(model: &LmModel, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    fs::write(path, checkpoint_bytes(model)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<LmModel, CheckpointError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_checkpoint(&bytes)
}
