//! Binary checkpoints.
//!
//! Layout:
//!
//! | bytes            | content                                              |
//! |------------------|------------------------------------------------------|
//! | 7                | magic `GSCKPT1`                                      |
//! | 4                | header length `L`, u32 little-endian                 |
//! | L                | UTF-8 JSON header (model config, scheme, epoch, params) |
//! | Σ 4·numel        | parameter values, f32 little-endian, manifest order  |

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{DepthNet, DepthNetConfig, Fan, FanConfig, ParamStore};
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 7] = b"GSCKPT1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Fan(FanConfig),
    Depth(DepthNetConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub scheme: String,
    pub epoch: usize,
    pub params: Vec<ParamEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub scheme: String,
    pub epoch: usize,
}

/// Serialises `params` with `meta` into checkpoint bytes.
pub fn encode_checkpoint<T: Real>(params: &ParamStore<T>, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        model: meta.model.clone(),
        scheme: meta.scheme.clone(),
        epoch: meta.epoch,
        params: params
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                trainable: p.trainable,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let len = u32::try_from(json.len())
        .map_err(|_| Error::Checkpoint("header exceeds 4 GiB".into()))?;
    let mut out = Vec::with_capacity(11 + json.len() + 4 * params.num_values());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    for p in params.iter() {
        for &v in p.tensor.data() {
            let f = v.to_f32().unwrap_or(f32::NAN);
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ParamStore<f32>, CheckpointMeta)> {
    if bytes.len() < 11 || &bytes[..7] != MAGIC {
        return Err(Error::Checkpoint("missing GSCKPT1 magic".into()));
    }
    let len = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
    let header_bytes = bytes.get(11..11 + len).ok_or_else(|| {
        Error::Checkpoint(format!(
            "truncated header: expected {len} bytes, got {}",
            bytes.len().saturating_sub(11)
        ))
    })?;
    let header: CheckpointHeader = serde_json::from_slice(header_bytes)?;
    let payload = &bytes[11 + len..];
    let expected: usize = header
        .params
        .iter()
        .map(|p| 4 * p.shape.iter().product::<usize>())
        .sum();
    if payload.len() != expected {
        return Err(Error::Checkpoint(format!(
            "payload length mismatch: expected {expected} bytes, got {}",
            payload.len()
        )));
    }
    let mut store = ParamStore::new();
    let mut offset = 0;
    for p in &header.params {
        let n: usize = p.shape.iter().product();
        let data = payload[offset..offset + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset += 4 * n;
        store.register(p.name.clone(), Tensor::new(p.shape.clone(), data)?, p.trainable)?;
    }
    Ok((
        store,
        CheckpointMeta {
            model: header.model,
            scheme: header.scheme,
            epoch: header.epoch,
        },
    ))
}

/// Writes atomically: the bytes go to a sibling temporary file that is
/// renamed over `path` once complete.
pub fn save_checkpoint<T: Real>(params: &ParamStore<T>, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(params, meta)?;
    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore<f32>, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Loads a face alignment network. With `expected`, the stored architecture
/// must match it exactly.
pub fn load_fan(path: &Path, expected: Option<&FanConfig>) -> Result<(Fan<f32>, CheckpointMeta)> {
    let (params, meta) = load_checkpoint(path)?;
    let ModelConfig::Fan(config) = &meta.model else {
        return Err(Error::Checkpoint(format!(
            "{} holds a depth network, not a face alignment network",
            path.display()
        )));
    };
    if let Some(exp) = expected {
        if exp != config {
            return Err(Error::Checkpoint(format!(
                "{}: architecture mismatch (checkpoint {:?}, expected {:?})",
                path.display(),
                config,
                exp
            )));
        }
    }
    let fan = Fan::from_params(config.clone(), params)?;
    Ok((fan, meta))
}

pub fn load_depth(
    path: &Path,
    expected: Option<&DepthNetConfig>,
) -> Result<(DepthNet<f32>, CheckpointMeta)> {
    let (params, meta) = load_checkpoint(path)?;
    let ModelConfig::Depth(config) = &meta.model else {
        return Err(Error::Checkpoint(format!(
            "{} does not hold a depth network",
            path.display()
        )));
    };
    if let Some(exp) = expected {
        if exp != config {
            return Err(Error::Checkpoint(format!(
                "{}: architecture mismatch (checkpoint {:?}, expected {:?})",
                path.display(),
                config,
                exp
            )));
        }
    }
    let net = DepthNet::from_params(config.clone(), params)?;
    Ok((net, meta))
}
