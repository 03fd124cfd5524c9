//! Checkpoint layout:
//!
//! ```text
//! b"LNETCKPT"            8 bytes
//! header length          u64, little endian
//! header                 JSON (CheckpointHeader)
//! parameters             f64, little endian, in LNetModel::params order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Block, LNetArch, LNetModel, Variant};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LNETCKPT";
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerHeader {
    pub block: Block,
    /// `[out, in, kh, kw]`
    pub weight_shape: [usize; 4],
    pub bias_len: usize,
    pub pad: usize,
    pub dilation: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub schema_version: u32,
    pub variant: Variant,
    pub layers: Vec<LayerHeader>,
    pub param_count: usize,
    pub seed: u64,
    /// Free-form training record (config, epochs run, final loss, ...).
    #[serde(default)]
    pub training: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: LNetModel,
}

impl Checkpoint {
    pub fn new(model: LNetModel, seed: u64, training: serde_json::Value) -> Self {
        let layers = model
            .arch()
            .layers()
            .map(|(block, s)| LayerHeader {
                block,
                weight_shape: s.weight_shape(),
                bias_len: s.out_channels,
                pad: s.pad,
                dilation: s.dilation,
            })
            .collect();
        let header = CheckpointHeader {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            variant: model.arch().variant,
            layers,
            param_count: model.param_count(),
            seed,
            training,
        };
        Checkpoint { header, model }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("checkpoint header serializes");
        let params = self.model.params();
        let mut out = Vec::with_capacity(16 + header.len() + 8 * params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    /// `path` is used only in error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::format(path, msg);
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if header_len > body.len() {
            return Err(bad(format!("header length {header_len} exceeds file size")));
        }
        let header: CheckpointHeader =
            serde_json::from_slice(&body[..header_len]).map_err(|source| Error::Json {
                path: path.to_owned(),
                source,
            })?;
        if header.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(bad(format!("unsupported schema version {}", header.schema_version)));
        }
        let arch = LNetArch::build(header.variant);
        let expected: Vec<([usize; 4], Block)> = arch.layers().map(|(b, s)| (s.weight_shape(), b)).collect();
        let found: Vec<([usize; 4], Block)> = header.layers.iter().map(|l| (l.weight_shape, l.block)).collect();
        if expected != found {
            return Err(bad(format!("layer shapes do not match the {} architecture", header.variant)));
        }
        let blob = &body[header_len..];
        if blob.len() != 8 * arch.param_count() || header.param_count != arch.param_count() {
            return Err(bad(format!(
                "expected {} parameters, found {} bytes of parameter data",
                arch.param_count(),
                blob.len()
            )));
        }
        let params: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let model = LNetModel::from_params(arch, &params).map_err(|e| bad(e.to_string()))?;
        Ok(Checkpoint { header, model })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
