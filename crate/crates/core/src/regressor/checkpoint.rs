//! Model checkpoint: `model.json` (configuration, case, training history
//! and the parameter file's checksum) next to `params.f32` (little-endian
//! `f32`, layer order, weights before biases).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::NetworkConfig;
use super::network::{Network, ParameterSet};
use super::train::{EpochStats, SgdConfig, TrainState};
use crate::case::ModeCase;
use crate::dataset::{sha256_hex, FileEntry};
use crate::error::{Error, Result};
use crate::fiber_modes::FiberSpec;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const CHECKPOINT_FILE: &str = "model.json";
pub const PARAMS_FILE: &str = "params.f32";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: NetworkConfig,
    pub case: ModeCase,
    pub scaling_constant: f64,
    pub epoch: u64,
    pub fiber: FiberSpec,
    pub master_seed: u64,
    pub sgd: SgdConfig,
    pub initial_loss: Option<f64>,
    pub history: Vec<EpochStats>,
    pub parameter_count: usize,
    pub byte_order: String,
    pub params: FileEntry,
}

pub fn encode_checkpoint(state: &TrainState<f32>) -> Result<(CheckpointHeader, Vec<u8>)> {
    let params = &state.network.params;
    let mut blob = Vec::with_capacity(params.len() * 4);
    params.iter().for_each(|v| blob.extend_from_slice(&v.to_le_bytes()));
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        config: state.network.config().clone(),
        case: state.case,
        scaling_constant: state.scaling_constant,
        epoch: state.epoch,
        fiber: state.fiber,
        master_seed: state.master_seed,
        sgd: state.sgd,
        initial_loss: state.initial_loss,
        history: state.history.clone(),
        parameter_count: params.len(),
        byte_order: "little".into(),
        params: FileEntry {
            name: PARAMS_FILE.into(),
            dtype: "f32".into(),
            shape: vec![params.len()],
            sha256: sha256_hex(&blob),
        },
    };
    Ok((header, blob))
}

/// Verifies the header and the parameter blob and rebuilds the state.
/// Momentum buffers are not stored.
pub fn decode_checkpoint(header_json: &[u8], blob: &[u8]) -> Result<TrainState<f32>> {
    let bad = |reason: String| Error::format("checkpoint", reason);
    let value: serde_json::Value = serde_json::from_slice(header_json)?;
    let version = value
        .get("format_version")
        .ok_or_else(|| bad("missing format_version".into()))?;
    if version.as_u64() != Some(u64::from(CHECKPOINT_VERSION)) {
        return Err(Error::UnsupportedVersion {
            found: version.to_string(),
            supported: CHECKPOINT_VERSION.to_string(),
        });
    }
    let h: CheckpointHeader = serde_json::from_value(value)?;
    let count = h.config.parameter_count().map_err(|e| bad(e.to_string()))?;
    if h.parameter_count != count || h.params.shape != [count] {
        return Err(bad(format!(
            "header declares {} parameters, the config has {count}",
            h.parameter_count
        )));
    }
    if h.params.name != PARAMS_FILE || h.params.dtype != "f32" || h.byte_order != "little" {
        return Err(bad("unsupported parameter file layout".into()));
    }
    if h.scaling_constant != h.case.scaling_constant() {
        return Err(bad(format!("scaling constant {} for the {}-mode case", h.scaling_constant, h.case)));
    }
    h.fiber.validate().map_err(|e| bad(e.to_string()))?;
    let expected = count
        .checked_mul(4)
        .ok_or_else(|| bad("parameter count overflows".into()))?;
    if blob.len() < expected {
        return Err(Error::Truncated {
            file: PARAMS_FILE.into(),
            expected,
            found: blob.len(),
        });
    }
    if blob.len() > expected {
        return Err(bad(format!("{} trailing parameter bytes", blob.len() - expected)));
    }
    let found = sha256_hex(blob);
    if !found.eq_ignore_ascii_case(&h.params.sha256) {
        return Err(Error::Checksum {
            file: PARAMS_FILE.into(),
            expected: h.params.sha256.clone(),
            found,
        });
    }
    let mut params = ParameterSet::<f32>::zeros(&h.config)?;
    for (p, chunk) in params.iter_mut().zip(blob.chunks_exact(4)) {
        *p = f32::from_le_bytes(chunk.try_into().unwrap());
    }
    if !params.is_finite() {
        return Err(bad("non-finite parameter".into()));
    }
    if h.sgd.batch_size == 0 || !(0.0..1.0).contains(&h.sgd.momentum) {
        return Err(bad("invalid optimizer settings".into()));
    }
    Ok(TrainState {
        network: Network::new(h.config, params)?,
        case: h.case,
        scaling_constant: h.scaling_constant,
        fiber: h.fiber,
        master_seed: h.master_seed,
        epoch: h.epoch,
        sgd: h.sgd,
        velocity: None,
        history: h.history,
        initial_loss: h.initial_loss,
    })
}

pub fn save_checkpoint(dir: &Path, state: &TrainState<f32>) -> Result<CheckpointHeader> {
    let (header, blob) = encode_checkpoint(state)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let params_path = dir.join(PARAMS_FILE);
    fs::write(&params_path, &blob).map_err(|e| Error::io(params_path, e))?;
    let header_path = dir.join(CHECKPOINT_FILE);
    fs::write(&header_path, serde_json::to_string_pretty(&header)?).map_err(|e| Error::io(header_path, e))?;
    Ok(header)
}

pub fn load_checkpoint(dir: &Path) -> Result<TrainState<f32>> {
    let header_path = dir.join(CHECKPOINT_FILE);
    let header = fs::read(&header_path).map_err(|e| Error::io(header_path, e))?;
    let params_path = dir.join(PARAMS_FILE);
    let blob = fs::read(&params_path).map_err(|e| Error::io(params_path, e))?;
    decode_checkpoint(&header, &blob)
}
