//! Tensor checkpoints: a JSON manifest next to a flat little-endian blob.
//!
//! `save(dir, "sr")` writes `dir/sr.json` and `dir/sr.bin`. The manifest
//! lists every tensor's name, shape, and element offset into the blob.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Params;
use crate::error::{Error, Result};

pub const FORMAT: &str = "dacesr-tensors";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub blob: String,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Element offset into the blob.
    pub offset: usize,
    pub len: usize,
}

pub fn paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{stem}.json")), dir.join(format!("{stem}.bin")))
}

pub fn exists(dir: &Path, stem: &str) -> bool {
    let (m, b) = paths(dir, stem);
    m.exists() && b.exists()
}

pub fn save<P: Params>(params: &P, dir: &Path, stem: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (mpath, bpath) = paths(dir, stem);
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, t) in params.tensors() {
        for v in &t.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name,
            shape: t.shape.clone(),
            offset,
            len: t.len(),
        });
        offset += t.len();
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        dtype: "f64".into(),
        blob: format!("{stem}.bin"),
        tensors,
    };
    fs::write(&bpath, blob)?;
    fs::write(&mpath, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Loads into an already-shaped parameter set; names and shapes must match.
pub fn load_into<P: Params>(params: &mut P, dir: &Path, stem: &str) -> Result<()> {
    let (mpath, bpath) = paths(dir, stem);
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&mpath)?)?;
    if manifest.format != FORMAT || manifest.dtype != "f64" {
        return Err(Error::UnsupportedFormat(format!(
            "{}: format {} dtype {}",
            mpath.display(),
            manifest.format,
            manifest.dtype
        )));
    }
    let blob = fs::read(&bpath)?;
    let mut slots = params.tensors_mut();
    if slots.len() != manifest.tensors.len() {
        return Err(Error::Shape(format!(
            "{}: {} tensors in checkpoint, {} expected",
            mpath.display(),
            manifest.tensors.len(),
            slots.len()
        )));
    }
    for ((name, t), entry) in slots.iter_mut().zip(&manifest.tensors) {
        if *name != entry.name || t.shape != entry.shape {
            return Err(Error::Shape(format!(
                "checkpoint tensor {} {:?} does not match {} {:?}",
                entry.name, entry.shape, name, t.shape
            )));
        }
        let start = entry.offset * 8;
        let end = start + entry.len * 8;
        let bytes = blob
            .get(start..end)
            .ok_or_else(|| Error::Shape(format!("blob truncated at tensor {}", entry.name)))?;
        for (v, chunk) in t.data.iter_mut().zip(bytes.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
    }
    Ok(())
}
