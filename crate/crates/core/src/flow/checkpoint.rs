//! Model checkpoints: `model.json` plus `weights.bin`.
//!
//! `weights.bin` holds every parameter as a little-endian f64, layer by
//! layer; within a layer the `fan_out x fan_in` weight matrix (row-major)
//! comes first, then the `fan_out` biases.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{MlpField, PriorSpec};
use crate::fields::Grid1D;

pub const MODEL_FILE: &str = "model.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
const FORMAT: &str = "pcfm-mlp";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed model description {path}: {reason}")]
    Model { path: PathBuf, reason: String },
    #[error("weights file has {actual} bytes, architecture needs {expected}")]
    WeightsLength { expected: usize, actual: usize },
}

/// Contents of `model.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub format: String,
    /// `[n + 5, hidden.., n]`
    pub widths: Vec<usize>,
    pub activation: String,
    pub time_embedding: Vec<String>,
    pub layer_order: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Grid1D>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<PriorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<Value>,
}

impl ModelCard {
    pub fn for_field(field: &MlpField) -> Self {
        ModelCard {
            format: FORMAT.into(),
            widths: field.widths(),
            activation: "tanh".into(),
            time_embedding: ["tau", "sin(2 pi tau)", "cos(2 pi tau)", "sin(4 pi tau)", "cos(4 pi tau)"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            layer_order: "per layer: weights (fan_out x fan_in, row-major) then bias".into(),
            grid: None,
            prior: None,
            training: None,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_checkpoint(field: &MlpField, card: &ModelCard, dir: &Path) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut card = card.clone();
    card.widths = field.widths();
    let mut bytes = Vec::with_capacity(field.num_params() * 8);
    for p in field.params() {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    let wpath = dir.join(WEIGHTS_FILE);
    fs::write(&wpath, bytes).map_err(io_err(&wpath))?;
    let mpath = dir.join(MODEL_FILE);
    fs::write(&mpath, serde_json::to_string_pretty(&card).expect("model card serializes")).map_err(io_err(&mpath))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(MlpField, ModelCard), CheckpointError> {
    let mpath = dir.join(MODEL_FILE);
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let bad = |reason: String| CheckpointError::Model {
        path: mpath.clone(),
        reason,
    };
    let card: ModelCard = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if card.format != FORMAT || card.activation != "tanh" {
        return Err(bad(format!("unsupported format {}/{}", card.format, card.activation)));
    }
    let mut field = MlpField::from_widths(&card.widths).map_err(|e| bad(e.to_string()))?;
    let wpath = dir.join(WEIGHTS_FILE);
    let bytes = fs::read(&wpath).map_err(io_err(&wpath))?;
    let expected = field.num_params() * 8;
    if bytes.len() != expected {
        return Err(CheckpointError::WeightsLength {
            expected,
            actual: bytes.len(),
        });
    }
    let params: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    field.set_params(&params).map_err(|e| bad(e.to_string()))?;
    Ok((field, card))
}
