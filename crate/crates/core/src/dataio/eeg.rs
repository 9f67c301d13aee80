use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default electrode count (spatial kernel height).
pub const DEFAULT_CHANNELS: usize = 63;
/// Default epoch length: 1 s at 100 Hz.
pub const DEFAULT_TIMEPOINTS: usize = 100;
pub const DEFAULT_SAMPLING_RATE_HZ: u32 = 100;
/// Validation trials held out per subject in the subject-dependent protocol.
pub const DEFAULT_VAL_TRIALS: usize = 740;
/// Validation trials held out in the leave-one-subject-out protocol.
pub const DEFAULT_LOSO_VAL_TRIALS: usize = 6660;

/// Epoched EEG for one subject and split: `trials × channels × timepoints`.
#[derive(Debug, Clone, PartialEq)]
pub struct EegTrialArray {
    pub data: Vec<f32>,
    pub n_trials: usize,
    pub n_channels: usize,
    pub n_times: usize,
    pub sampling_rate_hz: u32,
    pub channel_labels: Vec<String>,
    pub concept_ids: Vec<usize>,
    /// Image index within its concept.
    pub image_ids: Vec<usize>,
    pub repeat_index: Vec<usize>,
}

/// Per-trial metadata stored next to `eeg.tensor` as `trials.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialMetadata {
    pub sampling_rate_hz: u32,
    pub channel_labels: Vec<String>,
    pub concept_ids: Vec<usize>,
    pub image_ids: Vec<usize>,
    pub repeat_index: Vec<usize>,
}

impl EegTrialArray {
    pub fn new(
        data: Vec<f32>,
        shape: [usize; 3],
        sampling_rate_hz: u32,
        channel_labels: Vec<String>,
        concept_ids: Vec<usize>,
        image_ids: Vec<usize>,
        repeat_index: Vec<usize>,
    ) -> Result<Self> {
        let [n, c, t] = shape;
        let out = Self {
            data,
            n_trials: n,
            n_channels: c,
            n_times: t,
            sampling_rate_hz,
            channel_labels,
            concept_ids,
            image_ids,
            repeat_index,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, c, t) = (self.n_trials, self.n_channels, self.n_times);
        if c == 0 || t == 0 {
            return Err(Error::Shape(format!("empty trial shape {c}×{t}")));
        }
        if self.sampling_rate_hz == 0 {
            return Err(Error::Shape("sampling rate must be positive".into()));
        }
        if self.data.len() != n * c * t {
            return Err(Error::Shape(format!(
                "data holds {} values, expected {n}×{c}×{t}",
                self.data.len()
            )));
        }
        if self.channel_labels.len() != c {
            return Err(Error::Shape(format!(
                "{} channel labels for {c} channels",
                self.channel_labels.len()
            )));
        }
        for (name, len) in [
            ("concept_ids", self.concept_ids.len()),
            ("image_ids", self.image_ids.len()),
            ("repeat_index", self.repeat_index.len()),
        ] {
            if len != n {
                return Err(Error::Shape(format!("{name} has {len} entries for {n} trials")));
            }
        }
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { trial: pos / (c * t) });
        }
        Ok(())
    }

    pub fn trial(&self, i: usize) -> &[f32] {
        let sz = self.n_channels * self.n_times;
        &self.data[i * sz..(i + 1) * sz]
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.n_trials, self.n_channels, self.n_times]
    }

    pub fn metadata(&self) -> TrialMetadata {
        TrialMetadata {
            sampling_rate_hz: self.sampling_rate_hz,
            channel_labels: self.channel_labels.clone(),
            concept_ids: self.concept_ids.clone(),
            image_ids: self.image_ids.clone(),
            repeat_index: self.repeat_index.clone(),
        }
    }

    /// Trials at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let sz = self.n_channels * self.n_times;
        let mut data = Vec::with_capacity(indices.len() * sz);
        for &i in indices {
            data.extend_from_slice(self.trial(i));
        }
        Self {
            data,
            n_trials: indices.len(),
            n_channels: self.n_channels,
            n_times: self.n_times,
            sampling_rate_hz: self.sampling_rate_hz,
            channel_labels: self.channel_labels.clone(),
            concept_ids: indices.iter().map(|&i| self.concept_ids[i]).collect(),
            image_ids: indices.iter().map(|&i| self.image_ids[i]).collect(),
            repeat_index: indices.iter().map(|&i| self.repeat_index[i]).collect(),
        }
    }

    /// Concatenates trials of several arrays with identical channel/time layout.
    pub fn concat(parts: &[&EegTrialArray]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
        let mut out = (*first).clone();
        for p in &parts[1..] {
            if p.n_channels != out.n_channels || p.n_times != out.n_times {
                return Err(Error::Shape(format!(
                    "cannot concatenate {}×{} with {}×{}",
                    out.n_channels, out.n_times, p.n_channels, p.n_times
                )));
            }
            out.data.extend_from_slice(&p.data);
            out.n_trials += p.n_trials;
            out.concept_ids.extend_from_slice(&p.concept_ids);
            out.image_ids.extend_from_slice(&p.image_ids);
            out.repeat_index.extend_from_slice(&p.repeat_index);
        }
        Ok(out)
    }
}

/// Result of [`average_repeats`]; `warnings` lists stimuli whose repeat
/// count differs from the most common one.
#[derive(Debug, Clone)]
pub struct AveragedTrials {
    pub trials: EegTrialArray,
    pub warnings: Vec<String>,
}

/// Collapses repeated presentations of each `(concept, image)` stimulus into
/// their arithmetic mean. Output order follows first appearance.
pub fn average_repeats(eeg: &EegTrialArray) -> AveragedTrials {
    let mut order: Vec<(usize, usize)> = Vec::new();
    let mut groups: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for i in 0..eeg.n_trials {
        let key = (eeg.concept_ids[i], eeg.image_ids[i]);
        groups
            .entry(key)
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(i);
    }

    let mut counts: HashMap<usize, usize> = HashMap::new();
    for g in groups.values() {
        *counts.entry(g.len()).or_default() += 1;
    }
    let modal = counts
        .iter()
        .max_by_key(|(len, n)| (**n, usize::MAX - **len))
        .map(|(len, _)| *len)
        .unwrap_or(0);

    let sz = eeg.n_channels * eeg.n_times;
    let mut data = Vec::with_capacity(order.len() * sz);
    let mut warnings = Vec::new();
    let mut acc = vec![0f64; sz];
    for key in &order {
        let members = &groups[key];
        if members.len() != modal {
            let msg = format!(
                "stimulus (concept {}, image {}) has {} repeats, expected {modal}",
                key.0,
                key.1,
                members.len()
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        acc.fill(0.0);
        for &i in members {
            for (a, &v) in acc.iter_mut().zip(eeg.trial(i)) {
                *a += v as f64;
            }
        }
        let inv = members.len() as f64;
        data.extend(acc.iter().map(|a| (a / inv) as f32));
    }

    let n = order.len();
    AveragedTrials {
        trials: EegTrialArray {
            data,
            n_trials: n,
            n_channels: eeg.n_channels,
            n_times: eeg.n_times,
            sampling_rate_hz: eeg.sampling_rate_hz,
            channel_labels: eeg.channel_labels.clone(),
            concept_ids: order.iter().map(|k| k.0).collect(),
            image_ids: order.iter().map(|k| k.1).collect(),
            repeat_index: vec![0; n],
        },
        warnings,
    }
}

/// Seeded partition of `0..n` into `(train, val)` index sets, each sorted.
pub fn split_indices(n: usize, n_val: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_val >= n && n_val > 0 {
        return Err(Error::InvalidSplit(format!(
            "n_val = {n_val} must be smaller than the {n} available trials"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

/// Holds out `n_val` randomly chosen trials for model selection.
pub fn split_validation(
    eeg: &EegTrialArray,
    n_val: usize,
    seed: u64,
) -> Result<(EegTrialArray, EegTrialArray)> {
    let (train, val) = split_indices(eeg.n_trials, n_val, seed)?;
    Ok((eeg.select(&train), eeg.select(&val)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LosoFold {
    pub train: Vec<usize>,
    pub held_out: usize,
}

/// One fold per subject; subjects are referred to by index.
pub fn loso_folds(n_subjects: usize) -> Result<Vec<LosoFold>> {
    if n_subjects < 2 {
        return Err(Error::Protocol(format!(
            "leave-one-subject-out needs at least 2 subjects, got {n_subjects}"
        )));
    }
    Ok((0..n_subjects)
        .map(|held_out| LosoFold {
            train: (0..n_subjects).filter(|&s| s != held_out).collect(),
            held_out,
        })
        .collect())
}
