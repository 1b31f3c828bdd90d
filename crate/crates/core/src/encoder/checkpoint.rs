//! Checkpoint file: magic, u32 version, u64-length-prefixed JSON header, then
//! raw little-endian tensor blobs in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelCheckpoint, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PSSTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: Dtype,
    /// Byte offset from the start of the blob section.
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint(model: &ModelCheckpoint) -> Result<Vec<u8>> {
    model.validate()?;
    let mut entries = Vec::with_capacity(model.params.len());
    let mut offset = 0u64;
    for (name, t) in &model.params {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            dtype: Dtype::F64,
            offset,
        });
        offset += (t.len() * 8) as u64;
    }
    let header = serde_json::to_vec(&Header {
        config: model.config.clone(),
        tensors: entries,
    })?;
    let mut out = Vec::with_capacity(20 + header.len() + offset as usize);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for t in model.params.values() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelCheckpoint> {
    let (header, blobs): (Header, &[u8]) = split_container(bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, "checkpoint")?;
    let mut params = ParamSet::new();
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + n * e.dtype.size();
        if end > blobs.len() {
            return Err(Error::Format(format!(
                "checkpoint truncated: tensor {} needs bytes {start}..{end}, blob section has {}",
                e.name,
                blobs.len()
            )));
        }
        let raw = &blobs[start..end];
        let data: Vec<f64> = match e.dtype {
            Dtype::F64 => raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            Dtype::F32 => raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        };
        if params.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?).is_some() {
            return Err(Error::Format(format!("duplicate tensor {}", e.name)));
        }
    }
    let model = ModelCheckpoint {
        config: header.config,
        params,
    };
    model.validate()?;
    Ok(model)
}

/// Checks magic and version, parses the JSON header and returns it with the
/// bytes that follow.
pub(crate) fn split_container<'a, H: serde::de::DeserializeOwned>(
    bytes: &'a [u8],
    magic: &[u8; 8],
    version: u32,
    what: &str,
) -> Result<(H, &'a [u8])> {
    if bytes.len() < 20 {
        return Err(Error::Format(format!("{what} file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..8] != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..8]),
            String::from_utf8_lossy(magic)
        )));
    }
    let found = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if found != version {
        return Err(Error::Format(format!("unsupported {what} version {found}, expected {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    if len > body.len() {
        return Err(Error::Format(format!(
            "{what} truncated: header claims {len} bytes, {} available",
            body.len()
        )));
    }
    let header = serde_json::from_slice(&body[..len])
        .map_err(|e| Error::Format(format!("{what} header is not valid JSON: {e}")))?;
    Ok((header, &body[len..]))
}

pub fn save_checkpoint(model: &ModelCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelCheckpoint> {
    let path = path.as_ref();
    decode_checkpoint(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
