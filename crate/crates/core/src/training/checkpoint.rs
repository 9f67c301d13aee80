//! Checkpoint directory:
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/tensors/<name>.tensor     one TensorFile per parameter / buffer
//! ```
//!
//! Weights are stored as f32 whatever the in-memory scalar type.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::dataio::layout::write_json;
use crate::model::{HierarchicalModel, ModelConfig};
use crate::nn::Parameterized;
use crate::tensor_file::{read_tensor, write_tensor, Tensor};
use crate::{Error, Result, Scalar};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorKind {
    Param,
    Buffer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub kind: TensorKind,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub epoch: usize,
    pub val_loss: Option<f64>,
    pub rng_digest: String,
    /// SHA-256 over every tensor payload in manifest order.
    pub weights_digest: String,
    pub tensors: Vec<TensorEntry>,
}

fn collect<S: Scalar>(model: &HierarchicalModel<S>) -> Vec<(TensorEntry, Vec<f32>)> {
    let mut out = Vec::new();
    model.visit_params("", &mut |name, p| {
        out.push((
            TensorEntry {
                name: name.to_string(),
                kind: TensorKind::Param,
                file: format!("tensors/{name}.tensor"),
                shape: p.shape.clone(),
            },
            p.value.iter().map(|v| v.to_f32_lossy()).collect(),
        ))
    });
    model.visit_buffers("", &mut |name, b| {
        out.push((
            TensorEntry {
                name: name.to_string(),
                kind: TensorKind::Buffer,
                file: format!("tensors/{name}.tensor"),
                shape: vec![b.len()],
            },
            b.iter().map(|v| v.to_f32_lossy()).collect(),
        ))
    });
    out
}

fn digest(parts: &[(TensorEntry, Vec<f32>)]) -> String {
    let mut h = Sha256::new();
    for (e, data) in parts {
        h.update(e.name.as_bytes());
        h.update([0u8]);
        for v in data {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Writes `model` to `dir` (created if needed).
pub fn save_checkpoint<S: Scalar>(
    dir: &Path,
    model: &HierarchicalModel<S>,
    train: &TrainConfig,
    epoch: usize,
    val_loss: Option<f64>,
    rng_digest: &str,
) -> Result<CheckpointMeta> {
    let parts = collect(model);
    fs::create_dir_all(dir.join("tensors")).map_err(|e| Error::io(dir, e))?;
    for (e, data) in &parts {
        write_tensor(&dir.join(&e.file), &Tensor::new(e.name.clone(), e.shape.clone(), data.clone())?)?;
    }
    let meta = CheckpointMeta {
        version: CHECKPOINT_VERSION,
        model: model.config.clone(),
        train: train.clone(),
        epoch,
        val_loss,
        rng_digest: rng_digest.to_string(),
        weights_digest: digest(&parts),
        tensors: parts.into_iter().map(|(e, _)| e).collect(),
    };
    write_json(&dir.join("manifest.json"), &meta)?;
    Ok(meta)
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointMeta> {
    let path = dir.join("manifest.json");
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let raw = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let meta: CheckpointMeta = serde_json::from_slice(&raw)?;
    if meta.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{} has checkpoint version {}, this build reads version {CHECKPOINT_VERSION}",
            path.display(),
            meta.version
        )));
    }
    Ok(meta)
}

/// Restores a model saved by [`save_checkpoint`], verifying names, shapes
/// and the weights digest.
pub fn load_checkpoint<S: Scalar>(dir: &Path) -> Result<(HierarchicalModel<S>, CheckpointMeta)> {
    let meta = read_manifest(dir)?;
    let mut model = HierarchicalModel::<S>::new(&meta.model, 0)?;
    let expected: Vec<TensorEntry> = collect(&model).into_iter().map(|(e, _)| e).collect();
    if expected.len() != meta.tensors.len()
        || expected.iter().zip(&meta.tensors).any(|(a, b)| a.name != b.name || a.shape != b.shape || a.kind != b.kind)
    {
        return Err(Error::Checkpoint(format!(
            "{}: tensor list does not match the architecture in its own manifest",
            dir.display()
        )));
    }
    let mut loaded = Vec::with_capacity(meta.tensors.len());
    for e in &meta.tensors {
        let t = read_tensor(&dir.join(&e.file))?;
        if t.shape != e.shape {
            return Err(Error::HeaderMismatch {
                path: dir.join(&e.file),
                detail: format!("shape {:?} differs from manifest {:?}", t.shape, e.shape),
            });
        }
        loaded.push((e.clone(), t.data));
    }
    if digest(&loaded) != meta.weights_digest {
        return Err(Error::Checkpoint(format!("{}: weights digest mismatch", dir.display())));
    }
    let mut it = loaded.iter();
    model.visit_params_mut("", &mut |_, p| {
        let (_, data) = it.next().expect("counted above");
        p.value = data.iter().map(|&v| S::lit(v as f64)).collect();
    });
    model.visit_buffers_mut("", &mut |_, b| {
        let (_, data) = it.next().expect("counted above");
        *b = data.iter().map(|&v| S::lit(v as f64)).collect();
    });
    Ok((model, meta))
}
