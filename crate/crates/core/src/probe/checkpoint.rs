//! Probe checkpoints.
//!
//! ```text
//! "SAPLPRB1" | u64 LE header length | JSON header | W0 | b0 | W1 | b1 | ...
//! ```
//!
//! Each parameter block uses the activation-file layout with version 2
//! (binary64 payload): weights as `fan_in` rows of `fan_out` values, biases
//! as a single row.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::model::{InputScaling, Params, ProbeModel};
use super::train::TrainConfig;
use crate::error::{Error, Result};
use crate::store::{decode_f64_block, encode_f64_block};
use crate::util::write_atomic;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"SAPLPRB1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub layer_dims: Vec<usize>,
    pub seed: u64,
    pub config: TrainConfig,
    #[serde(default)]
    pub scaling: Option<InputScaling>,
}

pub fn checkpoint_bytes(model: &ProbeModel, config: &TrainConfig) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        layer_dims: model.layer_dims().to_vec(),
        seed: model.seed,
        config: config.clone(),
        scaling: model.scaling.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + json.len() + model.parameter_count() * 8);
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (w, b) in model.params.weights.iter().zip(&model.params.biases) {
        let w_std = w.as_standard_layout();
        encode_f64_block(&mut buf, w.ncols(), w_std.as_slice().expect("standard layout"));
        encode_f64_block(&mut buf, b.len(), b.as_slice().expect("contiguous"));
    }
    Ok(buf)
}

pub fn write_checkpoint(path: &Path, model: &ProbeModel, config: &TrainConfig) -> Result<()> {
    write_atomic(path, &checkpoint_bytes(model, config)?)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(ProbeModel, TrainConfig)> {
    if bytes.len() < 16 {
        return Err(Error::Truncated {
            expected: 16,
            found: bytes.len() as u64,
        });
    }
    let mut magic = [0u8; 8];
    magic.copy_from_slice(&bytes[..8]);
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: CHECKPOINT_MAGIC,
        });
    }
    let json_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let json_end = 16usize
        .checked_add(json_len)
        .filter(|&e| e <= bytes.len())
        .ok_or(Error::Truncated {
            expected: json_len as u64,
            found: (bytes.len() - 16) as u64,
        })?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..json_end])?;
    let mut rest = &bytes[json_end..];
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for pair in header.layer_dims.windows(2) {
        let (cols, rows, values, used) = decode_f64_block(rest)?;
        if (rows, cols) != (pair[0], pair[1]) {
            return Err(Error::Shape(format!(
                "weight block is {rows}x{cols}, expected {}x{}",
                pair[0], pair[1]
            )));
        }
        weights.push(Array2::from_shape_vec((rows, cols), values).expect("sized by header"));
        rest = &rest[used..];
        let (cols, rows, values, used) = decode_f64_block(rest)?;
        if rows != 1 || cols != pair[1] {
            return Err(Error::Shape(format!("bias block is {rows}x{cols}, expected 1x{}", pair[1])));
        }
        biases.push(Array1::from(values));
        rest = &rest[used..];
    }
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing byte(s) in checkpoint", rest.len())));
    }
    let model = ProbeModel::from_parts(header.layer_dims, Params { weights, biases }, header.seed, header.scaling)?;
    Ok((model, header.config))
}

pub fn read_checkpoint(path: &Path) -> Result<(ProbeModel, TrainConfig)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}
