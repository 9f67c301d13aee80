//! Optimization loop with validation-loss model selection, checkpoints and
//! multi-seed repetition.

mod adam;
pub mod checkpoint;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use adam::{clip_grad_norm, Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_VERSION};

use crate::dataio::{EegTrialArray, StimulusCatalog};
use crate::decomposition::EmbeddingTable;
use crate::model::HierarchicalModel;
use crate::nn::Parameterized;
use crate::objective::{Direction, ViewSet};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Capped at the training-set size.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub n_repeats: usize,
    /// Trials held out for model selection.
    pub val_size: usize,
    pub views: ViewSet,
    pub direction: Direction,
    /// Global gradient-norm bound; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            batch_size: 1000,
            max_epochs: 200,
            seed: 0,
            n_repeats: 5,
            val_size: crate::dataio::DEFAULT_VAL_TRIALS,
            views: ViewSet::TRIPLE,
            direction: Direction::EegToImg,
            grad_clip: None,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("train.learning_rate must be finite and ≥ 0, got {}", self.learning_rate)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("train.batch_size must be at least 2".into()));
        }
        if self.max_epochs == 0 || self.n_repeats == 0 {
            return Err(Error::Config("train.max_epochs and train.n_repeats must be positive".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("train.grad_clip must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// EEG epochs paired with the embedding triplet of their stimulus.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSet<S> {
    /// `[n × C × T]`
    pub eeg: Vec<S>,
    /// `[n × 3d]`
    pub targets: Vec<S>,
    pub n: usize,
    pub channels: usize,
    pub times: usize,
    pub dim: usize,
    pub concept_ids: Vec<usize>,
    /// Embedding-table row of each trial's stimulus.
    pub image_rows: Vec<usize>,
}

impl<S: Scalar> PairedSet<S> {
    pub fn new(eeg: &EegTrialArray, catalog: &StimulusCatalog, table: &EmbeddingTable) -> Result<Self> {
        let rows = catalog.row_index();
        let mut image_rows = Vec::with_capacity(eeg.n_trials);
        for i in 0..eeg.n_trials {
            let (c, img) = (eeg.concept_ids[i], eeg.image_ids[i]);
            let row = rows
                .get(&c)
                .filter(|(_, n)| img < *n)
                .map(|(start, _)| start + img)
                .ok_or_else(|| Error::Protocol(format!("trial {i} refers to unknown stimulus (concept {c}, image {img})")))?;
            image_rows.push(row);
        }
        let d = table.dim();
        let mut targets = Vec::with_capacity(eeg.n_trials * 3 * d);
        for &r in &image_rows {
            targets.extend(table.row(r).iter().map(|&v| S::lit(v as f64)));
        }
        Ok(Self {
            eeg: crate::scalar::cast_slice(&eeg.data),
            targets,
            n: eeg.n_trials,
            channels: eeg.n_channels,
            times: eeg.n_times,
            dim: d,
            concept_ids: eeg.concept_ids.clone(),
            image_rows,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn per(&self) -> usize {
        self.channels * self.times
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let (eeg, targets) = self.gather(idx);
        Self {
            eeg,
            targets,
            n: idx.len(),
            channels: self.channels,
            times: self.times,
            dim: self.dim,
            concept_ids: idx.iter().map(|&i| self.concept_ids[i]).collect(),
            image_rows: idx.iter().map(|&i| self.image_rows[i]).collect(),
        }
    }

    pub fn gather(&self, idx: &[usize]) -> (Vec<S>, Vec<S>) {
        let (p, t) = (self.per(), 3 * self.dim);
        let mut eeg = Vec::with_capacity(idx.len() * p);
        let mut targets = Vec::with_capacity(idx.len() * t);
        for &i in idx {
            eeg.extend_from_slice(&self.eeg[i * p..(i + 1) * p]);
            targets.extend_from_slice(&self.targets[i * t..(i + 1) * t]);
        }
        (eeg, targets)
    }

    /// Seeded split into `(train, val)` with `n_val` validation trials.
    pub fn split(&self, n_val: usize, seed: u64) -> Result<(Self, Self)> {
        let (tr, va) = crate::dataio::split_indices(self.n, n_val, seed)?;
        Ok((self.select(&tr), self.select(&va)))
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S> {
    /// Weights of the epoch with the lowest validation loss (the last epoch
    /// when no validation set is given).
    pub best: HierarchicalModel<S>,
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    pub history: Vec<EpochRecord>,
    pub warnings: Vec<String>,
    /// Digest of the RNG states at the selected epoch.
    pub rng_digest: String,
}

const DROPOUT_STREAM: u64 = 0x5eed_d20f_0a7e_0001;

fn rng_digest(rngs: &[&ChaCha8Rng]) -> String {
    let mut h = Sha256::new();
    for r in rngs {
        h.update(r.get_seed());
        h.update(r.get_stream().to_le_bytes());
        h.update(r.get_word_pos().to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Contiguous evaluation chunks of at most `bs` (a trailing singleton is
/// merged into the previous chunk so every chunk has a contrast).
fn eval_chunks(n: usize, bs: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<std::ops::Range<usize>> = (0..n).step_by(bs).map(|s| s..(s + bs).min(n)).collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() < 2) {
        let last = out.pop().expect("nonempty");
        out.last_mut().expect("nonempty").end = last.end;
    }
    out
}

/// Mean eval-mode contrastive loss over `set`, weighted by chunk size.
pub fn evaluate_loss<S: Scalar>(model: &HierarchicalModel<S>, set: &PairedSet<S>, cfg: &TrainConfig) -> Result<f64> {
    if set.n < 2 {
        return Err(Error::InvalidSplit(format!("validation set needs at least 2 trials, got {}", set.n)));
    }
    let mut total = 0.0;
    for r in eval_chunks(set.n, cfg.batch_size.min(set.n)) {
        let idx: Vec<usize> = r.clone().collect();
        let (eeg, tgt) = set.gather(&idx);
        let q = model.patches(&eeg, idx.len())?;
        let l = model.eval_loss(&q, &tgt, cfg.views, cfg.direction)?.to_f64_lossy();
        total += l * idx.len() as f64;
    }
    Ok(total / set.n as f64)
}

/// Trains `model` in place; `on_epoch` sees every log record as it is
/// produced.
pub fn train<S: Scalar>(
    model: &mut HierarchicalModel<S>,
    train_set: &PairedSet<S>,
    val_set: Option<&PairedSet<S>>,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    if train_set.n < 2 {
        return Err(Error::InvalidSplit(format!("training set needs at least 2 trials, got {}", train_set.n)));
    }
    if train_set.dim != model.embed_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.embed_dim(),
            actual: train_set.dim,
        });
    }
    let bs = cfg.batch_size.min(train_set.n);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DROPOUT_STREAM);
    let mut opt = Adam::new(cfg.learning_rate, cfg.adam);
    let divergence = 10.0 * (bs as f64).ln();
    let mut over = 0;

    let mut best: Option<(HierarchicalModel<S>, usize, Option<f64>, String)> = None;
    let mut history = Vec::with_capacity(cfg.max_epochs);
    let mut warnings = Vec::new();
    let mut order: Vec<usize> = (0..train_set.n).collect();
    for epoch in 0..cfg.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for (bi, idx) in order.chunks(bs).enumerate() {
            if idx.len() < 2 {
                log::debug!("epoch {epoch}: skipping trailing batch of {} trial", idx.len());
                continue;
            }
            let (eeg, tgt) = train_set.gather(idx);
            let q = model.patches(&eeg, idx.len())?;
            model.zero_grad();
            let (loss, cache) = model.loss_and_backward(&q, &tgt, cfg.views, cfg.direction, &mut dropout_rng)?;
            let loss = loss.to_f64_lossy();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            model.commit(&cache);
            if let Some(c) = cfg.grad_clip {
                clip_grad_norm(model, c);
            }
            opt.step(model);
            model.clamp_logit_scale();
            sum += loss * idx.len() as f64;
            count += idx.len();
        }
        let train_loss = sum / count.max(1) as f64;
        if train_loss > divergence {
            over += 1;
            if over == 3 {
                let msg = format!("training loss above 10·ln(batch) = {divergence:.3} for 3 consecutive epochs (epoch {epoch})");
                log::warn!("{msg}");
                warnings.push(msg);
            }
        } else {
            over = 0;
        }
        let val_loss = val_set.map(|v| evaluate_loss(model, v, cfg)).transpose()?;
        let rec = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:?}");
        on_epoch(&rec);
        history.push(rec);

        let better = match (&best, val_loss) {
            (None, _) => true,
            (Some((_, _, Some(b), _)), Some(v)) => v < *b,
            (Some(_), None) => true,
            (Some((_, _, None, _)), Some(_)) => true,
        };
        if better {
            let digest = rng_digest(&[&shuffle_rng, &dropout_rng]);
            best = Some((model.clone(), epoch, val_loss, digest));
        }
    }
    let (best, best_epoch, best_val_loss, rng_digest) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val_loss,
        history,
        warnings,
        rng_digest,
    })
}
