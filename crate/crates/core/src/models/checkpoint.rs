//! Checkpoint directories: `manifest.json` plus one tensor blob per named
//! tensor.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dims, Model, ModelConfig, Normalizer};
use crate::error::{Error, Result};
use crate::tensor::{read_tensor_file, write_tensor_file};
use crate::Tensor;

pub const CHECKPOINT_FORMAT: &str = "spanlab-checkpoint/1";
const MANIFEST: &str = "manifest.json";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    model: ModelConfig,
    dims: Dims,
    seed: u64,
    normalizer: Normalizer,
    params: Vec<Entry>,
    extra: Vec<Entry>,
    meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    file: String,
    shape: Vec<usize>,
}

/// A model plus whatever else a run wants to persist next to it
/// (optimizer moments, counters in `meta`).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub seed: u64,
    pub extra: BTreeMap<String, Tensor>,
    pub meta: serde_json::Value,
}

fn blob_name(name: &str) -> String {
    format!("{name}.sptn")
}

pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut params = Vec::new();
    for (name, t) in ckpt.model.named_params() {
        write_tensor_file(&dir.join(blob_name(&name)), t)?;
        params.push(Entry {
            file: blob_name(&name),
            shape: t.shape().to_vec(),
            name,
        });
    }
    let mut extra = Vec::new();
    for (name, t) in &ckpt.extra {
        if params.iter().any(|p| &p.name == name) {
            return Err(Error::invalid(format!("extra tensor {name} shadows a parameter")));
        }
        write_tensor_file(&dir.join(blob_name(name)), t)?;
        extra.push(Entry {
            name: name.clone(),
            file: blob_name(name),
            shape: t.shape().to_vec(),
        });
    }
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        model: ckpt.model.config.clone(),
        dims: ckpt.model.dims,
        seed: ckpt.seed,
        normalizer: ckpt.model.normalizer.clone(),
        params,
        extra,
        meta: ckpt.meta.clone(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST), text)?;
    Ok(())
}

fn read_entry(dir: &Path, e: &Entry) -> Result<Tensor> {
    if e.file.contains('/') || e.file.contains('\\') || e.file.starts_with('.') {
        return Err(Error::Format(format!("checkpoint blob path {:?} escapes the directory", e.file)));
    }
    let t: Tensor = read_tensor_file(&dir.join(&e.file))?;
    if t.shape() != e.shape.as_slice() {
        return Err(Error::Format(format!(
            "checkpoint tensor {} has shape {:?}, manifest says {:?}",
            e.name,
            t.shape(),
            e.shape
        )));
    }
    Ok(t)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Format(format!("unsupported checkpoint format {:?}", manifest.format)));
    }
    let mut model = Model::new(manifest.model, manifest.dims, manifest.seed)?;
    let mut stored: BTreeMap<&str, &Entry> = manifest.params.iter().map(|e| (e.name.as_str(), e)).collect();
    for (name, slot) in model.named_params_mut() {
        let entry = stored
            .remove(name.as_str())
            .ok_or_else(|| Error::Format(format!("checkpoint is missing parameter {name}")))?;
        let t = read_entry(dir, entry)?;
        if t.shape() != slot.shape() {
            return Err(Error::Format(format!(
                "checkpoint parameter {name} has shape {:?}, model expects {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    if let Some(name) = stored.keys().next() {
        return Err(Error::Format(format!("checkpoint has unknown parameter {name}")));
    }
    let norm = manifest.normalizer;
    if norm.input_scale.len() != model.dims.input_dim || norm.label_mean.len() != model.dims.output_dim {
        return Err(Error::Format("checkpoint normalizer does not match model dimensions".into()));
    }
    model.normalizer = norm;
    let mut extra = BTreeMap::new();
    for e in &manifest.extra {
        extra.insert(e.name.clone(), read_entry(dir, e)?);
    }
    Ok(Checkpoint {
        model,
        seed: manifest.seed,
        extra,
        meta: manifest.meta,
    })
}
