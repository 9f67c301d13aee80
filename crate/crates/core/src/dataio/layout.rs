//! On-disk dataset layout:
//!
//! ```text
//! <root>/catalog.json
//! <root>/embeddings.tensor          [n_images, 3, d]  (views b, f, r)
//! <root>/sub-XX/train/eeg.tensor    [trials, channels, timepoints]
//! <root>/sub-XX/train/trials.json
//! <root>/sub-XX/test/...
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::dataio::catalog::{SplitKind, StimulusCatalog};
use crate::dataio::eeg::{EegTrialArray, TrialMetadata};
use crate::decomposition::EmbeddingTable;
use crate::error::{Error, Result};
use crate::tensor_file::{read_tensor, write_tensor, Tensor};

/// Directory conventions understood by [`load_eeg`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Layout {
    /// `<root>/<subject>/<split>/{eeg.tensor,trials.json}`
    #[default]
    SubjectSplit,
}

pub fn split_dir(root: &Path, subject: &str, split: SplitKind) -> PathBuf {
    root.join(subject).join(split.dir_name())
}

/// Loads and validates one subject/split of epoched EEG.
pub fn load_eeg(root: &Path, subject: &str, split: SplitKind, layout: Layout) -> Result<EegTrialArray> {
    let Layout::SubjectSplit = layout;
    let dir = split_dir(root, subject, split);
    let tensor_path = dir.join("eeg.tensor");
    let meta_path = dir.join("trials.json");
    let tensor = read_tensor(&tensor_path)?;
    if tensor.shape.len() != 3 {
        return Err(Error::HeaderMismatch {
            path: tensor_path,
            detail: format!("expected rank-3 shape, got {:?}", tensor.shape),
        });
    }
    if !meta_path.exists() {
        return Err(Error::MissingFile(meta_path));
    }
    let meta_raw = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: TrialMetadata = serde_json::from_slice(&meta_raw)?;
    let shape = [tensor.shape[0], tensor.shape[1], tensor.shape[2]];
    let eeg = EegTrialArray::new(
        tensor.data,
        shape,
        meta.sampling_rate_hz,
        meta.channel_labels,
        meta.concept_ids,
        meta.image_ids,
        meta.repeat_index,
    )?;
    log::info!(
        "loaded {subject}/{}: {} trials, {} channels, {} timepoints",
        split.dir_name(),
        eeg.n_trials,
        eeg.n_channels,
        eeg.n_times
    );
    Ok(eeg)
}

pub fn save_eeg(root: &Path, subject: &str, split: SplitKind, eeg: &EegTrialArray) -> Result<()> {
    let dir = split_dir(root, subject, split);
    let tensor = Tensor::new(
        format!("{subject}/{}", split.dir_name()),
        eeg.shape().to_vec(),
        eeg.data.clone(),
    )?;
    write_tensor(&dir.join("eeg.tensor"), &tensor)?;
    write_json(&dir.join("trials.json"), &eeg.metadata())
}

pub fn load_catalog(root: &Path) -> Result<StimulusCatalog> {
    let path = root.join("catalog.json");
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let raw = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let cat: StimulusCatalog = serde_json::from_slice(&raw)?;
    cat.validate()?;
    Ok(cat)
}

pub fn save_catalog(root: &Path, catalog: &StimulusCatalog) -> Result<()> {
    write_json(&root.join("catalog.json"), catalog)
}

pub fn load_embeddings(root: &Path, catalog: &StimulusCatalog) -> Result<EmbeddingTable> {
    let path = root.join("embeddings.tensor");
    let t = read_tensor(&path)?;
    let expect = [catalog.n_images(), 3, catalog.embedding_dim];
    if t.shape != expect {
        return Err(Error::HeaderMismatch {
            path,
            detail: format!("embedding shape {:?}, catalog implies {expect:?}", t.shape),
        });
    }
    EmbeddingTable::new(t.data, catalog.embedding_dim)
}

pub fn save_embeddings(root: &Path, table: &EmbeddingTable) -> Result<()> {
    let t = Tensor::new("embeddings", vec![table.len(), 3, table.dim()], table.as_slice().to_vec())?;
    write_tensor(&root.join("embeddings.tensor"), &t)
}

/// Subject directories (`sub-*`) under `root`, sorted.
pub fn list_subjects(root: &Path) -> Result<Vec<String>> {
    let rd = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with("sub-") && entry.path().is_dir() {
            out.push(name);
        }
    }
    out.sort();
    Ok(out)
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
