//! Checkpoint directories.
//!
//! `manifest.json` records the format version, architecture, epoch and a hash
//! of the producing config, plus an index of arrays. Every array is stored as
//! its own little-endian `f64` file and carries a SHA-256 digest so that
//! truncated or edited files are caught on load.

use std::path::Path;

use atlab_core::model::{ArchSpec, ModelParameters};
use atlab_core::trainer::OptimizerState;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{format_err, read, read_json, write, write_json, Result};

pub const FORMAT_VERSION: u32 = 1;
const MOMENTUM_ARRAY: &str = "optimizer.momentum_buffer";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub momentum: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub arch_tag: String,
    pub arch: ArchSpec,
    pub epoch: usize,
    pub config_hash: Option<String>,
    pub arrays: Vec<ArrayEntry>,
    pub optimizer: Option<OptimizerMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub params: ModelParameters,
    pub optimizer: Option<OptimizerState>,
    pub config_hash: Option<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of a serializable config, computed over its compact JSON form.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    sha256_hex(&serde_json::to_vec(config).expect("plain data serializes"))
}

fn to_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn file_name(array: &str) -> String {
    format!("{}.bin", array.replace(['/', '\\'], "_"))
}

pub fn save_checkpoint(
    dir: &Path,
    params: &ModelParameters,
    epoch: usize,
    optimizer: Option<&OptimizerState>,
    config_hash: Option<&str>,
) -> Result<()> {
    let mut arrays = Vec::new();
    let mut put = |name: &str, shape: Vec<usize>, values: &[f64]| -> Result<()> {
        let bytes = to_bytes(values);
        let file = file_name(name);
        write(&dir.join(&file), &bytes)?;
        arrays.push(ArrayEntry {
            name: name.to_string(),
            shape,
            dtype: "f64".into(),
            file,
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    };
    for (i, g) in params.groups.iter().enumerate() {
        put(&g.name, g.shape.clone(), params.group(i))?;
    }
    if let Some(opt) = optimizer {
        put(MOMENTUM_ARRAY, vec![opt.buffers.len()], &opt.buffers)?;
    }
    let manifest = CheckpointManifest {
        version: FORMAT_VERSION,
        arch_tag: params.arch_tag(),
        arch: params.arch.clone(),
        epoch,
        config_hash: config_hash.map(str::to_string),
        arrays,
        optimizer: optimizer.map(|o| OptimizerMeta {
            momentum: o.momentum,
            weight_decay: o.weight_decay,
        }),
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

fn load_array(dir: &Path, entry: &ArrayEntry, expected_len: usize) -> Result<Vec<f64>> {
    let path = dir.join(&entry.file);
    if entry.dtype != "f64" {
        return Err(format_err(&path, format!("unsupported dtype {}", entry.dtype)));
    }
    let bytes = read(&path)?;
    if sha256_hex(&bytes) != entry.sha256 {
        return Err(format_err(&path, "checksum mismatch, file is corrupt"));
    }
    if bytes.len() != expected_len * 8 {
        return Err(format_err(&path, format!("{} bytes, expected {}", bytes.len(), expected_len * 8)));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Loads a checkpoint; when `expected` is given the stored architecture must
/// match it.
pub fn load_checkpoint(dir: &Path, expected: Option<&ArchSpec>) -> Result<Checkpoint> {
    let manifest_path = dir.join("manifest.json");
    let m: CheckpointManifest = read_json(&manifest_path)?;
    if m.version != FORMAT_VERSION {
        return Err(format_err(
            &manifest_path,
            format!("format version {} is not supported (expected {FORMAT_VERSION})", m.version),
        ));
    }
    if m.arch.arch_tag() != m.arch_tag {
        return Err(format_err(&manifest_path, "arch_tag does not match the stored architecture"));
    }
    if let Some(arch) = expected {
        if arch.arch_tag() != m.arch_tag {
            return Err(format_err(
                &manifest_path,
                format!("architecture {} does not match expected {}", m.arch_tag, arch.arch_tag()),
            ));
        }
    }
    let mut params = atlab_core::model::init_model(&m.arch)?;
    for i in 0..params.groups.len() {
        let g = params.groups[i].clone();
        let entry = m
            .arrays
            .iter()
            .find(|a| a.name == g.name)
            .ok_or_else(|| format_err(&manifest_path, format!("array {} missing", g.name)))?;
        if entry.shape != g.shape {
            return Err(format_err(&manifest_path, format!("array {} has shape {:?}, expected {:?}", g.name, entry.shape, g.shape)));
        }
        let values = load_array(dir, entry, g.len)?;
        params.group_mut(i).copy_from_slice(&values);
    }
    let optimizer = match (&m.optimizer, m.arrays.iter().find(|a| a.name == MOMENTUM_ARRAY)) {
        (Some(meta), Some(entry)) => {
            let mut state = OptimizerState::new(&params, meta.momentum, meta.weight_decay);
            state.buffers = load_array(dir, entry, params.len())?;
            Some(state)
        }
        (None, None) => None,
        _ => return Err(format_err(&manifest_path, "optimizer metadata and buffer must appear together")),
    };
    Ok(Checkpoint {
        epoch: m.epoch,
        params,
        optimizer,
        config_hash: m.config_hash,
    })
}
