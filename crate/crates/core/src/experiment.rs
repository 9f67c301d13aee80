//! Run configuration and the end-to-end protocols built on it: per-subject
//! training, leave-one-subject-out, repeated seeds, view/attention
//! ablations and the attention-shape sweep.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{
    average_repeats, generate_synthetic, list_subjects, load_catalog, load_eeg, load_embeddings, ClassLabel, EegTrialArray, Layout,
    SplitKind, StimulusCatalog, SubjectData, SyntheticDataset, SyntheticSpec, DEFAULT_LOSO_VAL_TRIALS,
};
use crate::decomposition::{EmbeddingTable, DEFAULT_RESOLUTION, DEFAULT_TAU};
use crate::evaluation::{per_view_retrieval, view_accuracies, AblationRow, AblationTable, Protocol, RetrievalReport, SubjectResult, TopK};
use crate::model::{HierarchicalModel, ModelConfig};
use crate::objective::ViewSet;
use crate::training::{train, EpochRecord, PairedSet, TrainConfig, TrainOutcome};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecompositionConfig {
    pub tau: f64,
    pub resolution: usize,
    /// See [`crate::decomposition::providers::saliency_from_spec`].
    pub saliency: String,
    /// See [`crate::decomposition::providers::embedder_from_spec`].
    pub embedder: String,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            resolution: DEFAULT_RESOLUTION,
            saliency: "center-surround".into(),
            embedder: "meanpool:1024".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset directory in the standard layout.
    pub root: Option<PathBuf>,
    /// Generate in memory instead of reading `root`.
    pub synthetic: Option<SyntheticSpec>,
    /// Subjects to use; empty means all.
    pub subjects: Vec<String>,
    /// Average repeated test presentations before retrieval.
    pub average_test_repeats: bool,
    /// Validation trials drawn from the pooled training subjects under LOSO.
    pub loso_val_size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: None,
            synthetic: None,
            subjects: Vec::new(),
            average_test_repeats: true,
            loso_val_size: DEFAULT_LOSO_VAL_TRIALS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub protocol: Protocol,
    /// Length of the ranked id lists in per-view dumps.
    pub top_n: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::SubjectDependent,
            top_n: 10,
        }
    }
}

/// Everything a run needs. Missing keys take the defaults; unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub decomposition: DecompositionConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.decomposition.tau) {
            return Err(Error::Config(format!("decomposition.tau = {} outside [0, 1]", self.decomposition.tau)));
        }
        if self.data.root.is_some() && self.data.synthetic.is_some() {
            return Err(Error::Config("data.root and data.synthetic are mutually exclusive".into()));
        }
        if let Some(s) = &self.data.synthetic {
            s.validate()?;
        }
        Ok(())
    }

    /// The resolved configuration as JSON, for report provenance.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Catalog, embeddings and per-subject recordings held in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub catalog: StimulusCatalog,
    pub embeddings: EmbeddingTable,
    pub subjects: Vec<SubjectData>,
}

impl From<SyntheticDataset> for Dataset {
    fn from(s: SyntheticDataset) -> Self {
        Self {
            catalog: s.catalog,
            embeddings: s.embeddings,
            subjects: s.subjects,
        }
    }
}

impl Dataset {
    /// Reads `root`; `subjects` restricts which subject directories load.
    pub fn load(root: &Path, subjects: &[String]) -> Result<Self> {
        let catalog = load_catalog(root)?;
        let embeddings = load_embeddings(root, &catalog)?;
        let names = if subjects.is_empty() { list_subjects(root)? } else { subjects.to_vec() };
        if names.is_empty() {
            return Err(Error::MissingFile(root.join("sub-*")));
        }
        let subjects = names
            .into_iter()
            .map(|name| {
                Ok(SubjectData {
                    train: load_eeg(root, &name, SplitKind::Train, Layout::SubjectSplit)?,
                    test: load_eeg(root, &name, SplitKind::Test, Layout::SubjectSplit)?,
                    name,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            catalog,
            embeddings,
            subjects,
        })
    }

    /// Builds the dataset named by `cfg`.
    pub fn resolve(cfg: &DataConfig) -> Result<Self> {
        match (&cfg.root, &cfg.synthetic) {
            (Some(root), None) => Self::load(root, &cfg.subjects),
            (None, Some(spec)) => {
                let mut ds: Self = generate_synthetic(spec)?.into();
                if !cfg.subjects.is_empty() {
                    ds.subjects.retain(|s| cfg.subjects.contains(&s.name));
                }
                Ok(ds)
            }
            _ => Err(Error::Config("exactly one of data.root and data.synthetic must be set".into())),
        }
    }

    pub fn subject_index(&self, name: &str) -> Result<usize> {
        self.subjects
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown subject `{name}`")))
    }
}

/// One embedding per zero-shot test concept, in catalog order.
#[derive(Debug, Clone)]
pub struct Gallery<S> {
    pub concept_ids: Vec<usize>,
    /// `[G × 3d]`, views b, f, r.
    pub embeddings: Vec<S>,
    pub dim: usize,
}

impl<S: Scalar> Gallery<S> {
    pub fn new(ds: &Dataset) -> Result<Self> {
        let mut concept_ids = Vec::new();
        let mut embeddings = Vec::new();
        for c in ds.catalog.concepts_in(SplitKind::Test) {
            let row = ds
                .catalog
                .image_row(c.concept_id, 0)
                .ok_or_else(|| Error::Protocol(format!("test concept {} has no image", c.concept_id)))?;
            concept_ids.push(c.concept_id);
            embeddings.extend(ds.embeddings.row(row).iter().map(|&v| S::lit(v as f64)));
        }
        if concept_ids.len() < 2 {
            return Err(Error::Protocol(format!("zero-shot gallery needs at least 2 test concepts, found {}", concept_ids.len())));
        }
        Ok(Self {
            concept_ids,
            embeddings,
            dim: ds.embeddings.dim(),
        })
    }

    /// Gallery position of each trial's concept.
    pub fn truth(&self, concept_ids: &[usize]) -> Result<Vec<usize>> {
        concept_ids
            .iter()
            .map(|c| {
                self.concept_ids
                    .iter()
                    .position(|g| g == c)
                    .ok_or_else(|| Error::Protocol(format!("test trial concept {c} is not in the gallery")))
            })
            .collect()
    }
}

/// Test queries after optional repeat averaging.
pub fn test_queries(test: &EegTrialArray, average: bool) -> EegTrialArray {
    if average {
        average_repeats(test).trials
    } else {
        test.clone()
    }
}

/// Eval-mode features of `queries` and the per-view accuracies against the
/// zero-shot gallery.
pub fn evaluate_model<S: Scalar>(
    model: &HierarchicalModel<S>,
    queries: &EegTrialArray,
    gallery: &Gallery<S>,
) -> Result<(Vec<S>, BTreeMap<String, TopK>)> {
    let truth = gallery.truth(&queries.concept_ids)?;
    let eeg: Vec<S> = crate::scalar::cast_slice(&queries.data);
    let feats = model.encode(&eeg, queries.n_trials)?;
    let acc = view_accuracies(&feats, &gallery.embeddings, gallery.dim, &truth)?;
    Ok((feats, acc))
}

/// Class label of each concept id.
pub fn class_labels(catalog: &StimulusCatalog, concept_ids: &[usize]) -> Result<Vec<ClassLabel>> {
    concept_ids
        .iter()
        .map(|&c| {
            catalog
                .concept(c)
                .map(|e| e.class_label)
                .ok_or_else(|| Error::Protocol(format!("concept {c} missing from catalog")))
        })
        .collect()
}

/// A trained model and how it did.
#[derive(Debug, Clone)]
pub struct TrainedRun<S> {
    pub outcome: TrainOutcome<S>,
    pub result: SubjectResult,
    /// Accuracy restricted to the views the model was trained on.
    pub trained_views: TopK,
}

fn fit<S: Scalar>(
    ds: &Dataset,
    train_eeg: &EegTrialArray,
    n_val: usize,
    test: &EegTrialArray,
    label: &str,
    cfg: &RunConfig,
    seed: u64,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainedRun<S>> {
    let tc = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let all = PairedSet::<S>::new(train_eeg, &ds.catalog, &ds.embeddings)?;
    let (tr, va) = if n_val > 0 {
        let (a, b) = all.split(n_val, seed)?;
        (a, Some(b))
    } else {
        (all, None)
    };
    let mut model = HierarchicalModel::<S>::new(&cfg.model, seed)?;
    let outcome = train(&mut model, &tr, va.as_ref(), &tc, on_epoch)?;
    let gallery = Gallery::<S>::new(ds)?;
    let queries = test_queries(test, cfg.data.average_test_repeats);
    let (feats, views) = evaluate_model(&outcome.best, &queries, &gallery)?;
    let trained_views = per_view_retrieval(&feats, &gallery.embeddings, gallery.dim, tc.views, &gallery.truth(&queries.concept_ids)?, 0)?.accuracy;
    Ok(TrainedRun {
        outcome,
        result: SubjectResult {
            subject: label.to_string(),
            seed,
            views,
        },
        trained_views,
    })
}

/// Trains and tests within one subject.
pub fn train_subject<S: Scalar>(
    ds: &Dataset,
    subject: usize,
    cfg: &RunConfig,
    seed: u64,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainedRun<S>> {
    let s = ds
        .subjects
        .get(subject)
        .ok_or_else(|| Error::InvalidArgument(format!("subject index {subject} out of range")))?;
    fit(ds, &s.train, cfg.train.val_size, &s.test, &s.name, cfg, seed, on_epoch)
}

/// Trains on every other subject and tests on `held_out`.
pub fn train_loso<S: Scalar>(
    ds: &Dataset,
    held_out: usize,
    cfg: &RunConfig,
    seed: u64,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainedRun<S>> {
    let folds = crate::dataio::loso_folds(ds.subjects.len())?;
    let fold = folds
        .get(held_out)
        .ok_or_else(|| Error::InvalidArgument(format!("subject index {held_out} out of range")))?;
    let parts: Vec<&EegTrialArray> = fold.train.iter().map(|&i| &ds.subjects[i].train).collect();
    let pooled = EegTrialArray::concat(&parts)?;
    let s = &ds.subjects[held_out];
    fit(ds, &pooled, cfg.data.loso_val_size, &s.test, &s.name, cfg, seed, on_epoch)
}

/// Every subject under `cfg.eval.protocol` for one seed.
pub fn run_protocol<S: Scalar>(ds: &Dataset, cfg: &RunConfig, seed: u64) -> Result<Vec<TrainedRun<S>>> {
    (0..ds.subjects.len())
        .map(|i| match cfg.eval.protocol {
            Protocol::SubjectDependent => train_subject(ds, i, cfg, seed, &mut |_| {}),
            Protocol::Loso => train_loso(ds, i, cfg, seed, &mut |_| {}),
        })
        .collect()
}

fn seeds(cfg: &RunConfig) -> Vec<u64> {
    (0..cfg.train.n_repeats as u64).map(|i| cfg.train.seed + i).collect()
}

/// Seeds `seed .. seed + n_repeats`, each run independently; results are
/// assembled in seed order so thread count does not change the output.
pub fn repeat_runs<S: Scalar>(ds: &Dataset, cfg: &RunConfig) -> Result<RetrievalReport> {
    let per_seed: Vec<Vec<TrainedRun<S>>> = seeds(cfg).into_par_iter().map(|s| run_protocol(ds, cfg, s)).collect::<Result<_>>()?;
    let runs = per_seed.into_iter().flatten().map(|r| r.result).collect();
    RetrievalReport::new(cfg.eval.protocol, runs, cfg.echo())
}

/// Mean accuracy over subjects on the trained views, one entry per seed.
fn per_seed_accuracy<S: Scalar>(ds: &Dataset, cfg: &RunConfig) -> Result<Vec<TopK>> {
    seeds(cfg)
        .into_par_iter()
        .map(|s| {
            let runs = run_protocol::<S>(ds, cfg, s)?;
            let accs: Vec<TopK> = runs.iter().map(|r| r.trained_views).collect();
            Ok(TopK::mean_std(&accs).0)
        })
        .collect()
}

/// Every nonempty view subset, with and without cross-attention, over
/// `n_repeats` seeds.
pub fn run_ablation<S: Scalar>(ds: &Dataset, cfg: &RunConfig) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for views in ViewSet::all_subsets() {
        for cross_attention in [true, false] {
            let mut c = cfg.clone();
            c.train.views = views;
            c.model.cahi.enabled = cross_attention;
            rows.push(AblationRow::new(views, cross_attention, per_seed_accuracy::<S>(ds, &c)?));
        }
    }
    Ok(AblationTable {
        seeds: seeds(cfg),
        rows,
        config: cfg.echo(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_layers: usize,
    pub heads: usize,
    pub mean: TopK,
    pub std: TopK,
    pub parameters: usize,
}

/// Grid over integration depth and head count.
pub fn sweep_attention<S: Scalar>(ds: &Dataset, cfg: &RunConfig, layers: &[usize], heads: &[usize]) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::new();
    for &n_layers in layers {
        for &h in heads {
            let mut c = cfg.clone();
            c.model.cahi.n_layers = n_layers;
            c.model.cahi.heads = h;
            c.validate()?;
            let accs = per_seed_accuracy::<S>(ds, &c)?;
            let (mean, std) = TopK::mean_std(&accs);
            out.push(SweepPoint {
                n_layers,
                heads: h,
                mean,
                std,
                parameters: crate::nn::Parameterized::num_parameters(&HierarchicalModel::<f32>::new(&c.model, 0)?),
            });
        }
    }
    Ok(out)
}
