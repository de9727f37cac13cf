//! Versioned checkpoint container.
//!
//! Layout: 8-byte magic, `u32` LE format version, `u64` LE header length,
//! a JSON header, then the parameters, Adam first moments and Adam second
//! moments as little-endian `f64` arrays in tensor order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::optim::{Adam, AdamConfig};
use super::{NetConfig, Network, TensorInfo};
use crate::features::FeatureConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"YZCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    Magic,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint tensors do not match the configured network: {0}")]
    Shape(String),
    #[error("checkpoint truncated or padded: expected {expected} bytes of data, found {found}")]
    Length { expected: usize, found: usize },
    #[error("checkpoint network config is invalid: {0}")]
    Config(#[from] super::NnError),
}

#[derive(Serialize, Deserialize)]
struct Header {
    net: NetConfig,
    features: FeatureConfig,
    input_width: usize,
    tensors: Vec<TensorInfo>,
    adam: AdamConfig,
    adam_step: u64,
    state: serde_json::Value,
}

/// Everything restored from a checkpoint.
pub struct Checkpoint {
    pub net: Network,
    pub features: FeatureConfig,
    pub adam: Adam,
    /// Caller-defined run state (counters, config echo).
    pub state: serde_json::Value,
}

fn write_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    out.reserve(xs.len() * 8);
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

/// Writes a checkpoint atomically (temporary file, then rename).
pub fn save(
    path: &Path,
    net: &Network,
    features: &FeatureConfig,
    adam: &Adam,
    state: &serde_json::Value,
) -> Result<(), CheckpointError> {
    let header = Header {
        net: *net.config(),
        features: *features,
        input_width: net.input_width(),
        tensors: net.tensors().to_vec(),
        adam: adam.cfg,
        adam_step: adam.step,
        state: state.clone(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(20 + header.len() + 24 * net.num_params());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    write_f64s(&mut buf, net.params());
    write_f64s(&mut buf, &adam.m);
    write_f64s(&mut buf, &adam.v);
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::Magic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version { found: version, expected: CHECKPOINT_VERSION });
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes.get(20..20 + hlen).ok_or(CheckpointError::Length { expected: hlen, found: bytes.len() - 20 })?;
    let header: Header = serde_json::from_slice(body)?;
    header.net.validate()?;

    let mut net = Network::layout(header.net, header.input_width);
    if net.tensors() != header.tensors.as_slice() {
        let expected: Vec<String> = net.tensors().iter().map(|t| format!("{}{:?}", t.name, t.shape)).collect();
        let found: Vec<String> = header.tensors.iter().map(|t| format!("{}{:?}", t.name, t.shape)).collect();
        return Err(CheckpointError::Shape(format!("expected {expected:?}, found {found:?}")));
    }
    let n = net.num_params();
    let data = &bytes[20 + hlen..];
    if data.len() != 3 * n * 8 {
        return Err(CheckpointError::Length { expected: 3 * n * 8, found: data.len() });
    }
    let read = |k: usize| -> Vec<f64> {
        data[k * n * 8..(k + 1) * n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    net.params_mut().copy_from_slice(&read(0));
    let mut adam = Adam::new(n, header.adam);
    adam.m = read(1);
    adam.v = read(2);
    adam.step = header.adam_step;
    Ok(Checkpoint { net, features: header.features, adam, state: header.state })
}
