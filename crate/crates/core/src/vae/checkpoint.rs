use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EpochStats, Result, VaeConfig, VaeError, VaeModel};
use crate::autodiff::Tensor;
use crate::descriptors::DescriptorStats;
use crate::repr::NormalizationStats;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TSVA";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained parameters with everything needed to interpret them.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeCheckpoint {
    pub model: VaeModel<f32>,
    pub norm_stats: NormalizationStats,
    pub descriptor_stats: DescriptorStats,
    pub history: Vec<EpochStats>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: VaeConfig,
    norm_stats: NormalizationStats,
    descriptor_stats: DescriptorStats,
    history: Vec<EpochStats>,
    params: Vec<ParamEntry>,
    payload_sha256: String,
}

fn payload(model: &VaeModel<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(model.num_params() * 4);
    for p in &model.params {
        for v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

impl VaeCheckpoint {
    pub fn config(&self) -> &VaeConfig {
        &self.model.config
    }

    /// Short identifier derived from the parameter payload.
    pub fn checkpoint_id(&self) -> String {
        hex::encode(&Sha256::digest(payload(&self.model))[..8])
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let body = payload(&self.model);
        let mut offset = 0;
        let params = self
            .model
            .config
            .param_specs()
            .into_iter()
            .zip(&self.model.params)
            .map(|(s, p)| {
                let e = ParamEntry {
                    name: s.name,
                    shape: p.shape.clone(),
                    offset,
                    len: p.numel(),
                };
                offset += p.numel();
                e
            })
            .collect();
        let header = Header {
            version: CHECKPOINT_VERSION,
            config: self.model.config.clone(),
            norm_stats: self.norm_stats.clone(),
            descriptor_stats: self.descriptor_stats,
            history: self.history.clone(),
            params,
            payload_sha256: hex::encode(Sha256::digest(&body)),
        };
        let json = serde_json::to_vec(&header).map_err(|e| VaeError::Format(e.to_string()))?;
        let mut out = Vec::with_capacity(12 + json.len() + body.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&body);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: &str| VaeError::Format(m.to_string());
        if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(fmt("missing TSVA magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(VaeError::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let json = bytes.get(12..12 + hlen).ok_or_else(|| fmt("truncated header"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| VaeError::Format(e.to_string()))?;
        if header.version != version {
            return Err(VaeError::VersionMismatch {
                found: header.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let body = &bytes[12 + hlen..];
        if hex::encode(Sha256::digest(body)) != header.payload_sha256 {
            return Err(VaeError::ChecksumMismatch);
        }
        let floats: Vec<f32> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut params = Vec::with_capacity(header.params.len());
        for e in &header.params {
            let data = floats
                .get(e.offset..e.offset + e.len)
                .ok_or_else(|| fmt("parameter extends past payload"))?
                .to_vec();
            params.push(Tensor::new(e.shape.clone(), data).map_err(|err| VaeError::Format(err.to_string()))?);
        }
        Ok(Self {
            model: VaeModel::from_params(header.config, params)?,
            norm_stats: header.norm_stats,
            descriptor_stats: header.descriptor_stats,
            history: header.history,
        })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &VaeCheckpoint) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<VaeCheckpoint> {
    VaeCheckpoint::from_bytes(&std::fs::read(path)?)
}
