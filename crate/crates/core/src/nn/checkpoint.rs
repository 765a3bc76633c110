//! Binary checkpoint: `SPNCKPT1`, a little-endian `u32` header length, a
//! JSON header, then every parameter as little-endian `f32` in storage order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{ResNet, ResNetConfig};
use super::tensor::Tensor;
use crate::dataset::sha256_hex;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SPNCKPT1";

/// Context needed to interpret predictions outside the training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckpointMeta {
    pub targets: Vec<String>,
    pub gains: Vec<f64>,
    pub places: Vec<String>,
    pub feature_scale: Vec<f64>,
    pub dataset_hash: String,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ResNetConfig,
    params: Vec<ParamEntry>,
    meta: CheckpointMeta,
    config_hash: String,
}

pub fn config_hash(config: &ResNetConfig) -> String {
    sha256_hex(&serde_json::to_vec(config).expect("config serialises"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ResNet<f32>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let config = self.model.config().clone();
        let header = Header {
            params: config
                .param_shapes()
                .into_iter()
                .map(|(name, shape)| ParamEntry { name, shape })
                .collect(),
            config_hash: config_hash(&config),
            config,
            meta: self.meta.clone(),
        };
        let header = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::with_capacity(12 + header.len() + 4 * self.model.config().n_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for p in self.model.params() {
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// `expected`, when given, must equal the stored network config.
    pub fn from_bytes(bytes: &[u8], expected: Option<&ResNetConfig>) -> std::result::Result<Self, String> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err("not a checkpoint (bad magic)".into());
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(12..12 + hlen).ok_or("truncated header")?;
        let header: Header = serde_json::from_slice(body).map_err(|e| format!("bad header: {e}"))?;
        if config_hash(&header.config) != header.config_hash {
            return Err("config hash mismatch".into());
        }
        if let Some(exp) = expected {
            if exp != &header.config {
                return Err(format!("network config {:?} does not match expected {exp:?}", header.config));
            }
        }
        let shapes = header.config.param_shapes();
        if shapes.len() != header.params.len()
            || shapes.iter().zip(&header.params).any(|((n, s), e)| n != &e.name || s != &e.shape)
        {
            return Err("parameter table does not match config".into());
        }
        let data = &bytes[12 + hlen..];
        let count = header.config.n_params();
        if data.len() != 4 * count {
            return Err(format!("{} parameter bytes, expected {}", data.len(), 4 * count));
        }
        let mut floats = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        let mut params = Vec::with_capacity(shapes.len());
        for (_, shape) in shapes {
            let n = shape.iter().product();
            let v: Vec<f32> = floats.by_ref().take(n).collect();
            params.push(Tensor::new(shape, v).map_err(|e| e.to_string())?);
        }
        let model = ResNet::from_params(header.config, params).map_err(|e| e.to_string())?;
        Ok(Self { model, meta: header.meta })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, expected: Option<&ResNetConfig>) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, expected).map_err(|r| Error::load(path, r))
}
