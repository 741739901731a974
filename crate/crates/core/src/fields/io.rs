//! On-disk batch format: a directory holding `manifest.json` and `data.bin`.
//!
//! `data.bin` is `count * nx * nt` little-endian f64 values, sample-major,
//! then time-major, then space. The manifest repeats the grid so a batch can
//! be read without any other context.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{FieldError, Grid1D, SampleBatch, Spacing};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATA_FILE: &str = "data.bin";

#[derive(Debug, Error)]
pub enum BatchIoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("payload has {actual} bytes, manifest implies {expected}")]
    PayloadLength { expected: usize, actual: usize },
    #[error("manifest describes an invalid batch: {0}")]
    Validation(#[from] FieldError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchManifest {
    pub nx: usize,
    pub nt: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub count: usize,
    pub dtype: String,
    pub byte_order: String,
    #[serde(default, skip_serializing_if = "is_inclusive")]
    pub spacing: Spacing,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Vec<Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<Value>,
}

fn is_inclusive(s: &Spacing) -> bool {
    *s == Spacing::Inclusive
}

impl BatchManifest {
    pub fn for_batch(batch: &SampleBatch) -> Self {
        let g = batch.grid();
        BatchManifest {
            nx: g.nx,
            nt: g.nt,
            x_min: g.x_min,
            x_max: g.x_max,
            t_min: g.t_min,
            t_max: g.t_max,
            count: batch.count(),
            dtype: "f64".into(),
            byte_order: "little".into(),
            spacing: g.spacing,
            params: None,
            sampler: None,
        }
    }

    pub fn grid(&self) -> Result<Grid1D, FieldError> {
        Grid1D::new(
            self.nx,
            self.nt,
            (self.x_min, self.x_max),
            (self.t_min, self.t_max),
            self.spacing,
        )
    }
}

/// Optional metadata stored next to the grid description.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BatchMeta {
    pub params: Option<Vec<Value>>,
    pub sampler: Option<Value>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BatchIoError + '_ {
    move |source| BatchIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn serialize_batch(batch: &SampleBatch, dir: &Path) -> Result<(), BatchIoError> {
    serialize_batch_with(batch, dir, &BatchMeta::default())
}

pub fn serialize_batch_with(batch: &SampleBatch, dir: &Path, meta: &BatchMeta) -> Result<(), BatchIoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut manifest = BatchManifest::for_batch(batch);
    manifest.params = meta.params.clone();
    manifest.sampler = meta.sampler.clone();

    let mut bytes = Vec::with_capacity(batch.data().len() * 8);
    for v in batch.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let data_path = dir.join(DATA_FILE);
    fs::write(&data_path, &bytes).map_err(io_err(&data_path))?;

    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;
    Ok(())
}

pub fn deserialize_batch(dir: &Path) -> Result<SampleBatch, BatchIoError> {
    deserialize_batch_with(dir).map(|(b, _)| b)
}

pub fn read_manifest(dir: &Path) -> Result<BatchManifest, BatchIoError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: BatchManifest = serde_json::from_str(&text).map_err(|e| BatchIoError::Manifest {
        path: manifest_path.clone(),
        reason: e.to_string(),
    })?;
    if manifest.dtype != "f64" || manifest.byte_order != "little" {
        return Err(BatchIoError::Manifest {
            path: manifest_path,
            reason: format!("unsupported dtype/byte_order {}/{}", manifest.dtype, manifest.byte_order),
        });
    }
    Ok(manifest)
}

pub fn deserialize_batch_with(dir: &Path) -> Result<(SampleBatch, BatchMeta), BatchIoError> {
    let manifest = read_manifest(dir)?;
    let grid = manifest.grid()?;
    if manifest.count == 0 {
        return Err(FieldError::EmptyBatch.into());
    }
    if let Some(p) = &manifest.params {
        if p.len() != manifest.count {
            return Err(BatchIoError::Manifest {
                path: dir.join(MANIFEST_FILE),
                reason: format!("{} params records for {} samples", p.len(), manifest.count),
            });
        }
    }

    let data_path = dir.join(DATA_FILE);
    let bytes = fs::read(&data_path).map_err(io_err(&data_path))?;
    let expected = manifest.count * grid.len() * 8;
    if bytes.len() != expected {
        return Err(BatchIoError::PayloadLength {
            expected,
            actual: bytes.len(),
        });
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let batch = SampleBatch::new(grid, data)?;
    Ok((
        batch,
        BatchMeta {
            params: manifest.params,
            sampler: manifest.sampler,
        },
    ))
}
