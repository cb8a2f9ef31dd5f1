//! Parameter persistence: a JSON manifest of `(group, name, shape, offset)`
//! entries next to one flat little-endian `f64` blob.
//!
//! `<stem>.json` holds the manifest, `<stem>.bin` the blob.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::nn::ParamSet;
use super::tensor::Tensor;
use crate::{Error, Result};

pub const CHECKPOINT_HEADER: &str = "IWM-CKPT-1";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    header: String,
    blob: String,
    entries: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    group: String,
    name: String,
    shape: [usize; 2],
    offset: usize,
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

pub fn manifest_path(stem: &Path) -> PathBuf {
    with_ext(stem, ".json")
}

pub fn blob_path(stem: &Path) -> PathBuf {
    with_ext(stem, ".bin")
}

/// Writes every group under `stem`. Groups are stored in the given order.
pub fn save_params(stem: &Path, groups: &[(&str, &ParamSet)]) -> Result<()> {
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    for (group, params) in groups {
        for (name, t) in params.names().iter().zip(params.tensors()) {
            entries.push(Entry {
                group: group.to_string(),
                name: name.clone(),
                shape: [t.rows(), t.cols()],
                offset: blob.len(),
            });
            for x in t.data() {
                blob.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    let blob_file = blob_path(stem);
    let manifest = Manifest {
        header: CHECKPOINT_HEADER.to_string(),
        blob: blob_file
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        entries,
    };
    if let Some(dir) = stem.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(&blob_file, &blob)?;
    fs::write(manifest_path(stem), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Reads all groups back, in stored order.
pub fn load_params(stem: &Path) -> Result<Vec<(String, ParamSet)>> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(manifest_path(stem))?)?;
    if manifest.header != CHECKPOINT_HEADER {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint header `{}`",
            manifest.header
        )));
    }
    let blob_file = stem
        .parent()
        .map(|d| d.join(&manifest.blob))
        .unwrap_or_else(|| PathBuf::from(&manifest.blob));
    let blob = fs::read(blob_file)?;
    let mut out: Vec<(String, ParamSet)> = Vec::new();
    for e in manifest.entries {
        let n = e.shape[0] * e.shape[1];
        let end = e.offset + 8 * n;
        if end > blob.len() {
            return Err(Error::Checkpoint(format!(
                "entry `{}` extends past the blob ({} > {})",
                e.name,
                end,
                blob.len()
            )));
        }
        let data = blob[e.offset..end]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::new(e.shape[0], e.shape[1], data);
        match out.iter_mut().find(|(g, _)| *g == e.group) {
            Some((_, ps)) => {
                ps.add(e.name, t);
            }
            None => {
                let mut ps = ParamSet::new();
                ps.add(e.name, t);
                out.push((e.group, ps));
            }
        }
    }
    Ok(out)
}
