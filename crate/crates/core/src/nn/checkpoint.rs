//! Checkpoint file: one JSON header line, a newline, then every parameter as
//! little-endian `f32` in [`Detector::flat_params`] order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{Detector, DetectorConfig};
use super::NnError;

pub const CHECKPOINT_FORMAT: &str = "motion-profile-detector";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerShape {
    pub weight: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub config: DetectorConfig,
    pub seed: u64,
    pub parameter_count: usize,
    /// SHA-256 of the config's JSON encoding.
    pub config_hash: String,
    pub layers: Vec<LayerShape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_val_loss: Option<f64>,
}

pub fn config_hash(config: &DetectorConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl CheckpointHeader {
    pub fn for_detector(det: &Detector<f32>, seed: u64) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: det.config.clone(),
            seed,
            parameter_count: det.param_count(),
            config_hash: config_hash(&det.config),
            layers: det
                .layers
                .iter()
                .map(|l| LayerShape {
                    weight: l.weight.len(),
                    bias: l.bias.len(),
                })
                .collect(),
            best_epoch: None,
            best_val_loss: None,
        }
    }
}

pub fn encode_checkpoint(det: &Detector<f32>, header: &CheckpointHeader) -> Vec<u8> {
    let mut out = serde_json::to_vec(header).expect("header serializes");
    out.push(b'\n');
    for v in det.flat_params() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn save_checkpoint(path: impl AsRef<Path>, det: &Detector<f32>, header: &CheckpointHeader) -> Result<(), NnError> {
    std::fs::write(path, encode_checkpoint(det, header))?;
    Ok(())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Detector<f32>, CheckpointHeader), NnError> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| NnError::Corrupt("no header line".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| NnError::Corrupt(format!("header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(NnError::Corrupt(format!("unknown format `{}`", header.format)));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(NnError::VersionMismatch(format!(
            "file version {}, supported {CHECKPOINT_VERSION}",
            header.version
        )));
    }
    if header.config_hash != config_hash(&header.config) {
        return Err(NnError::VersionMismatch("config hash does not match the stored config".into()));
    }
    header.config.validate()?;
    let expected = header.config.param_count();
    if header.parameter_count != expected {
        return Err(NnError::CheckpointMismatch(format!(
            "header lists {} parameters, config needs {expected}",
            header.parameter_count
        )));
    }
    let body = &bytes[nl + 1..];
    if body.len() != 4 * expected {
        return Err(NnError::Corrupt(format!(
            "{} payload bytes, expected {}",
            body.len(),
            4 * expected
        )));
    }
    let flat: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let det = Detector::from_flat(header.config.clone(), &flat)?;
    Ok((det, header))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Detector<f32>, CheckpointHeader), NnError> {
    decode_checkpoint(&std::fs::read(path)?)
}
