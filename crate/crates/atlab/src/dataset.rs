//! Packed dataset directories.
//!
//! A dataset directory holds `manifest.json` plus two little-endian arrays:
//! `inputs.bin` (`u8` scaled by 1/255, or `f32`) and `labels.bin` (`i64`).

use std::path::Path;

use atlab_core::data::{Dataset, Split};
use serde::{Deserialize, Serialize};

use crate::error::{format_err, read, read_json, write, write_json, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    U8,
    F32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Files {
    pub inputs: String,
    pub labels: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub n: usize,
    /// Shape of one sample, e.g. `[3, 32, 32]` or `[d]`.
    pub shape: Vec<usize>,
    pub class_count: usize,
    pub dtype: Dtype,
    pub files: Files,
    #[serde(default = "train")]
    pub split: Split,
}

fn train() -> Split {
    Split::Train
}

pub const MANIFEST: &str = "manifest.json";

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST);
    let m: Manifest = read_json(&manifest_path)?;
    let d: usize = m.shape.iter().product();
    let inputs_path = dir.join(&m.files.inputs);
    let raw = read(&inputs_path)?;
    let inputs: Vec<f64> = match m.dtype {
        Dtype::U8 => {
            if raw.len() != m.n * d {
                return Err(format_err(&inputs_path, format!("{} bytes, expected {}", raw.len(), m.n * d)));
            }
            raw.iter().map(|&b| b as f64 / 255.0).collect()
        }
        Dtype::F32 => {
            if raw.len() != m.n * d * 4 {
                return Err(format_err(&inputs_path, format!("{} bytes, expected {}", raw.len(), m.n * d * 4)));
            }
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect()
        }
    };
    let labels_path = dir.join(&m.files.labels);
    let raw = read(&labels_path)?;
    if raw.len() != m.n * 8 {
        return Err(format_err(&labels_path, format!("{} bytes, expected {}", raw.len(), m.n * 8)));
    }
    let mut labels = Vec::with_capacity(m.n);
    for c in raw.chunks_exact(8) {
        let v = i64::from_le_bytes(c.try_into().unwrap());
        if v < 0 || v as u64 >= m.class_count as u64 {
            return Err(format_err(&labels_path, format!("label {v} outside 0..{}", m.class_count)));
        }
        labels.push(v as usize);
    }
    Ok(Dataset::new(m.name, inputs, labels, m.shape, m.class_count, m.split)?)
}

/// Writes `dataset` in the packed format. `u8` storage requires every value
/// to be a multiple of 1/255 and `f32` storage requires values representable
/// in `f32`, so that reloading is exact.
pub fn save_dataset(dataset: &Dataset, dir: &Path, dtype: Dtype) -> Result<()> {
    let inputs_path = dir.join("inputs.bin");
    let bytes: Vec<u8> = match dtype {
        Dtype::U8 => {
            let mut out = Vec::with_capacity(dataset.inputs.len());
            for &v in &dataset.inputs {
                let b = (v * 255.0).round();
                if b as u8 as f64 / 255.0 != v {
                    return Err(format_err(&inputs_path, format!("value {v} is not a multiple of 1/255")));
                }
                out.push(b as u8);
            }
            out
        }
        Dtype::F32 => {
            let mut out = Vec::with_capacity(dataset.inputs.len() * 4);
            for &v in &dataset.inputs {
                if v as f32 as f64 != v {
                    return Err(format_err(&inputs_path, format!("value {v} is not representable in f32")));
                }
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
            out
        }
    };
    write(&inputs_path, bytes)?;
    let labels: Vec<u8> = dataset.labels.iter().flat_map(|&y| (y as i64).to_le_bytes()).collect();
    write(&dir.join("labels.bin"), labels)?;
    let m = Manifest {
        name: dataset.name.clone(),
        n: dataset.len(),
        shape: dataset.sample_shape.clone(),
        class_count: dataset.class_count,
        dtype,
        files: Files {
            inputs: "inputs.bin".into(),
            labels: "labels.bin".into(),
        },
        split: dataset.split,
    };
    write_json(&dir.join(MANIFEST), &m)
}
