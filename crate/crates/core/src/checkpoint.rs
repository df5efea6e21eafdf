//! Parameter checkpoints: a JSON manifest describing name/shape/offset of
//! every tensor plus a little-endian f64 blob. Round-trips are bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "params.bin";

#[derive(Debug, Error)]
pub enum CkptError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint missing parameter {name}")]
    MissingParam { name: String },
    #[error("checkpoint parameter {name} has shape {got_rows}x{got_cols}, expected {want_rows}x{want_cols}")]
    ShapeMismatch {
        name: String,
        got_rows: usize,
        got_cols: usize,
        want_rows: usize,
        want_cols: usize,
    },
    #[error("checkpoint blob truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    rows: usize,
    cols: usize,
    /// element offset (not bytes) into the blob
    offset: usize,
}

pub fn save_params(dir: &Path, named: &[(String, &Tensor)]) -> Result<(), CkptError> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(named.len());
    let mut blob: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    for (name, t) in named {
        entries.push(Entry {
            name: name.clone(),
            rows: t.rows(),
            cols: t.cols(),
            offset,
        });
        for &x in t.data() {
            blob.extend_from_slice(&x.to_le_bytes());
        }
        offset += t.data().len();
    }
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&entries)?)?;
    fs::write(dir.join(BLOB_FILE), blob)?;
    Ok(())
}

/// Fills the given tensors (matched by name) from a checkpoint directory.
/// Every requested parameter must be present with the expected shape.
pub fn load_params(dir: &Path, named: &mut [(String, &mut Tensor)]) -> Result<(), CkptError> {
    let entries: Vec<Entry> = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    let blob = fs::read(dir.join(BLOB_FILE))?;
    for (name, t) in named.iter_mut() {
        let entry = entries
            .iter()
            .find(|e| &e.name == name)
            .ok_or_else(|| CkptError::MissingParam { name: name.clone() })?;
        if entry.rows != t.rows() || entry.cols != t.cols() {
            return Err(CkptError::ShapeMismatch {
                name: name.clone(),
                got_rows: entry.rows,
                got_cols: entry.cols,
                want_rows: t.rows(),
                want_cols: t.cols(),
            });
        }
        let count = entry.rows * entry.cols;
        let start = entry.offset * 8;
        let end = start + count * 8;
        if end > blob.len() {
            return Err(CkptError::Truncated {
                need: end,
                have: blob.len(),
            });
        }
        let data: Vec<f64> = blob[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        **t = Tensor::new(entry.rows, entry.cols, data);
    }
    Ok(())
}
