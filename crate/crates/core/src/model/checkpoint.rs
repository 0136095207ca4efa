//! Self-describing weight container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header (configuration, tensor directory, free-form metadata), then every
//! tensor's values as little-endian `f64` in directory order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::weights::ModelWeights;
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SCFCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

/// Weights plus caller metadata (normalization statistics, training step).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub weights: ModelWeights,
    pub metadata: serde_json::Value,
}

pub fn encode_checkpoint(weights: &ModelWeights, metadata: &serde_json::Value) -> Result<Vec<u8>> {
    let header = Header {
        config: weights.config.clone(),
        tensors: weights
            .params
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
        metadata: metadata.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Serde(e.to_string()))?;
    let mut out = Vec::with_capacity(20 + json.len() + 8 * weights.params.total_values());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in weights.params.iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint(format!("truncated while reading {what}")));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn decode_checkpoint(mut bytes: &[u8]) -> Result<Checkpoint> {
    let magic = take(&mut bytes, 8, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(&mut bytes, 4, "version")?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let len = u64::from_le_bytes(take(&mut bytes, 8, "header length")?.try_into().unwrap());
    let json = take(&mut bytes, len as usize, "header")?;
    let header: Header = serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    let mut params = ParamSet::new();
    for entry in header.tensors {
        let n: usize = entry.shape.iter().product();
        let raw = take(&mut bytes, 8 * n, &entry.name)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(&entry.shape, data).map_err(|e| Error::Checkpoint(format!("{}: {e}", entry.name)))?;
        params.insert(entry.name, t)?;
    }
    if !bytes.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len())));
    }
    Ok(Checkpoint {
        weights: ModelWeights::from_params(header.config, params)?,
        metadata: header.metadata,
    })
}

pub fn save_checkpoint(path: &Path, weights: &ModelWeights, metadata: &serde_json::Value) -> Result<()> {
    let bytes = encode_checkpoint(weights, metadata)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
