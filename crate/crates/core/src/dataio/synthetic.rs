//! Planted-structure stand-in for a THINGS-style recording.
//!
//! Every concept owns three latent vectors (contour, object, context) that
//! occupy disjoint coordinate blocks of one latent space, so they are
//! mutually orthogonal. Image embeddings are fixed linear images of the
//! per-image latents, arranged hierarchically:
//!
//! ```text
//! C_b = A_bb z_b
//! C_f = A_fb z_b + A_ff z_f
//! C_r = A_rf z_f + A_rr z_r
//! ```
//!
//! EEG trials are driven by the concept latents: each latent coordinate
//! owns a spatial pattern and a temporal bump whose latency grows with the
//! hierarchy level, and white Gaussian noise is added at `snr_db`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataio::catalog::{ClassLabel, ConceptEntry, SplitKind, StimulusCatalog, CATALOG_VERSION};
use crate::dataio::eeg::EegTrialArray;
use crate::dataio::layout::{save_catalog, save_eeg, save_embeddings, write_json};
use crate::decomposition::EmbeddingTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentDims {
    pub contour: usize,
    pub object: usize,
    pub context: usize,
}

impl LatentDims {
    pub fn as_array(&self) -> [usize; 3] {
        [self.contour, self.object, self.context]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_concepts: usize,
    /// Zero-shot concepts (one image each); the rest are training concepts.
    pub n_test_concepts: usize,
    pub n_images_per_concept: usize,
    pub n_repeats: usize,
    pub n_subjects: usize,
    pub channels: usize,
    pub timepoints: usize,
    pub sampling_rate_hz: u32,
    pub embedding_dim: usize,
    /// Signal-to-noise ratio in dB; `null` disables noise.
    pub snr_db: Option<f64>,
    pub latent_dims: LatentDims,
    /// Per-image latent perturbation (embeddings only), as a fraction of the
    /// latent block's RMS magnitude.
    pub image_jitter: f64,
    /// Std of per-subject perturbation of the spatial patterns.
    pub subject_variability: f64,
    /// Std of the per-trial perturbation of the driving latents (unit-variance
    /// latents). Unlike sensor noise this lives in the signal subspace, so no
    /// spatial or temporal filter removes it.
    pub trial_variability: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_concepts: 50,
            n_test_concepts: 10,
            n_images_per_concept: 4,
            n_repeats: 4,
            n_subjects: 1,
            channels: 63,
            timepoints: 100,
            sampling_rate_hz: 100,
            embedding_dim: 64,
            snr_db: Some(0.0),
            latent_dims: LatentDims {
                contour: 6,
                object: 6,
                context: 6,
            },
            image_jitter: 0.3,
            subject_variability: 0.25,
            trial_variability: 1.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::SyntheticSpec(m));
        for (name, v) in [
            ("n_concepts", self.n_concepts),
            ("n_test_concepts", self.n_test_concepts),
            ("n_images_per_concept", self.n_images_per_concept),
            ("n_repeats", self.n_repeats),
            ("n_subjects", self.n_subjects),
            ("channels", self.channels),
            ("timepoints", self.timepoints),
            ("embedding_dim", self.embedding_dim),
            ("latent_dims.contour", self.latent_dims.contour),
            ("latent_dims.object", self.latent_dims.object),
            ("latent_dims.context", self.latent_dims.context),
        ] {
            if v == 0 {
                return err(format!("{name} must be positive"));
            }
        }
        if self.sampling_rate_hz == 0 {
            return err("sampling_rate_hz must be positive".into());
        }
        if self.n_test_concepts >= self.n_concepts {
            return err(format!(
                "n_test_concepts ({}) must leave at least one training concept out of {}",
                self.n_test_concepts, self.n_concepts
            ));
        }
        for (name, k) in [
            ("contour", self.latent_dims.contour),
            ("object", self.latent_dims.object),
            ("context", self.latent_dims.context),
        ] {
            if k > self.embedding_dim {
                return err(format!(
                    "latent dim {name} = {k} exceeds embedding_dim {}",
                    self.embedding_dim
                ));
            }
        }
        if !(self.image_jitter >= 0.0 && self.subject_variability >= 0.0 && self.trial_variability >= 0.0) {
            return err("jitter and variability must be non-negative".into());
        }
        if matches!(self.snr_db, Some(v) if v.is_nan()) {
            return err("snr_db is NaN".into());
        }
        Ok(())
    }

    pub fn n_train_concepts(&self) -> usize {
        self.n_concepts - self.n_test_concepts
    }
}

#[derive(Debug, Clone)]
pub struct SubjectData {
    pub name: String,
    pub train: EegTrialArray,
    pub test: EegTrialArray,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    pub catalog: StimulusCatalog,
    pub embeddings: EmbeddingTable,
    pub subjects: Vec<SubjectData>,
}

impl SyntheticDataset {
    /// Writes the dataset in the standard directory layout plus the spec
    /// (`synthetic_spec.json`) for provenance.
    pub fn write(&self, root: &Path) -> Result<()> {
        save_catalog(root, &self.catalog)?;
        save_embeddings(root, &self.embeddings)?;
        for s in &self.subjects {
            save_eeg(root, &s.name, SplitKind::Train, &s.train)?;
            save_eeg(root, &s.name, SplitKind::Test, &s.test)?;
        }
        write_json(&root.join("synthetic_spec.json"), &self.spec)
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// `d × k` matrix, row-major, entries N(0, 1/k).
fn mixing(rng: &mut ChaCha8Rng, d: usize, k: usize) -> Vec<f64> {
    gaussian_vec(rng, d * k, 1.0 / (k as f64).sqrt())
}

fn apply(m: &[f64], d: usize, z: &[f64], out: &mut [f64]) {
    let k = z.len();
    for i in 0..d {
        out[i] += m[i * k..(i + 1) * k].iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Peak latency (s after onset) of each hierarchy level.
const VIEW_LATENCY_S: [f64; 3] = [0.10, 0.18, 0.30];
const BUMP_WIDTH_S: f64 = 0.06;
/// Epoch start relative to stimulus onset.
const EPOCH_START_S: f64 = -0.2;

/// Generates the dataset. Pure function of `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dims = spec.latent_dims.as_array();
    let (c_n, t_n, d) = (spec.channels, spec.timepoints, spec.embedding_dim);

    // concept latents, one block per view
    let latents: Vec<[Vec<f64>; 3]> = (0..spec.n_concepts)
        .map(|_| {
            [
                gaussian_vec(&mut rng, dims[0], 1.0),
                gaussian_vec(&mut rng, dims[1], 1.0),
                gaussian_vec(&mut rng, dims[2], 1.0),
            ]
        })
        .collect();

    let a_bb = mixing(&mut rng, d, dims[0]);
    let a_fb = mixing(&mut rng, d, dims[0]);
    let a_ff = mixing(&mut rng, d, dims[1]);
    let a_rf = mixing(&mut rng, d, dims[1]);
    let a_rr = mixing(&mut rng, d, dims[2]);

    // spatial pattern and temporal bump for every latent coordinate
    let mut spatial: Vec<Vec<f64>> = Vec::new();
    let mut temporal: Vec<Vec<f64>> = Vec::new();
    for (v, &k) in dims.iter().enumerate() {
        for i in 0..k {
            let mut s = gaussian_vec(&mut rng, c_n, 1.0);
            normalize(&mut s);
            s.iter_mut().for_each(|x| *x *= (c_n as f64).sqrt());
            spatial.push(s);
            let lat = VIEW_LATENCY_S[v] + 0.02 * (i % 3) as f64;
            let wave = (0..t_n)
                .map(|t| {
                    let ts = EPOCH_START_S + t as f64 / spec.sampling_rate_hz as f64;
                    (-0.5 * ((ts - lat) / BUMP_WIDTH_S).powi(2)).exp()
                })
                .collect();
            temporal.push(wave);
        }
    }

    // catalog + embeddings
    let n_train = spec.n_train_concepts();
    let mut concepts = Vec::with_capacity(spec.n_concepts);
    let mut table = Vec::new();
    for (cid, z) in latents.iter().enumerate() {
        let split = if cid < n_train { SplitKind::Train } else { SplitKind::Test };
        let n_img = if split == SplitKind::Train { spec.n_images_per_concept } else { 1 };
        let name = format!("concept_{cid:04}");
        concepts.push(ConceptEntry {
            concept_id: cid,
            name: name.clone(),
            split,
            class_label: ClassLabel::ALL[cid % ClassLabel::ALL.len()],
            image_ids: (0..n_img).map(|i| format!("{name}_{i:02}")).collect(),
        });
        for _ in 0..n_img {
            let zi: Vec<Vec<f64>> = z
                .iter()
                .map(|zv| {
                    let rms = (zv.iter().map(|x| x * x).sum::<f64>() / zv.len() as f64).sqrt();
                    zv.iter()
                        .map(|x| x + spec.image_jitter * rms * rng.sample::<f64, _>(StandardNormal))
                        .collect()
                })
                .collect();
            let mut cb = vec![0.0; d];
            apply(&a_bb, d, &zi[0], &mut cb);
            let mut cf = vec![0.0; d];
            apply(&a_fb, d, &zi[0], &mut cf);
            apply(&a_ff, d, &zi[1], &mut cf);
            let mut cr = vec![0.0; d];
            apply(&a_rf, d, &zi[1], &mut cr);
            apply(&a_rr, d, &zi[2], &mut cr);
            for mut e in [cb, cf, cr] {
                normalize(&mut e);
                table.extend(e.iter().map(|&x| x as f32));
            }
        }
    }
    let catalog = StimulusCatalog {
        version: CATALOG_VERSION,
        embedding_dim: d,
        concepts,
    };
    let embeddings = EmbeddingTable::new(table, d)?;

    let channel_labels: Vec<String> = (0..c_n).map(|i| format!("E{:02}", i + 1)).collect();
    let mut subjects = Vec::with_capacity(spec.n_subjects);
    for s in 0..spec.n_subjects {
        let mut srng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x9E37_79B9).wrapping_add(1 + s as u64));
        let patterns: Vec<Vec<f64>> = spatial
            .iter()
            .map(|p| {
                p.iter()
                    .map(|x| x + spec.subject_variability * srng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();

        // response of one unit latent coordinate, [C × T]
        let basis: Vec<Vec<f64>> = patterns
            .iter()
            .zip(&temporal)
            .map(|(p, w)| p.iter().flat_map(|&pc| w.iter().map(move |&wt| pc * wt)).collect())
            .collect();
        let synth = |z: &mut dyn Iterator<Item = f64>| -> Vec<f64> {
            let mut x = vec![0.0; c_n * t_n];
            for (zi, b) in z.zip(&basis) {
                x.iter_mut().zip(b).for_each(|(xv, bv)| *xv += zi * bv);
            }
            x
        };
        let template = |cid: usize| synth(&mut latents[cid].iter().flatten().copied());
        let templates: Vec<Vec<f64>> = (0..spec.n_concepts).map(template).collect();
        let power = templates
            .iter()
            .flat_map(|t| t.iter())
            .map(|x| x * x)
            .sum::<f64>()
            / (spec.n_concepts * c_n * t_n) as f64;
        let noise_std = match spec.snr_db {
            Some(db) if db.is_finite() => (power / 10f64.powf(db / 10.0)).sqrt(),
            Some(db) if db < 0.0 => {
                return Err(Error::SyntheticSpec("snr_db = -inf leaves no signal".into()))
            }
            _ => 0.0,
        };

        let mut make_split = |split: SplitKind| -> Result<EegTrialArray> {
            let mut data = Vec::new();
            let (mut cids, mut iids, mut reps) = (Vec::new(), Vec::new(), Vec::new());
            for entry in catalog.concepts_in(split) {
                for img in 0..entry.image_ids.len() {
                    for r in 0..spec.n_repeats {
                        let jittered;
                        let tpl = if spec.trial_variability > 0.0 {
                            let z: Vec<f64> = latents[entry.concept_id]
                                .iter()
                                .flatten()
                                .map(|&z| z + spec.trial_variability * srng.sample::<f64, _>(StandardNormal))
                                .collect();
                            jittered = synth(&mut z.into_iter());
                            &jittered
                        } else {
                            &templates[entry.concept_id]
                        };
                        data.extend(tpl.iter().map(|&x| {
                            let n = if noise_std > 0.0 {
                                noise_std * srng.sample::<f64, _>(StandardNormal)
                            } else {
                                0.0
                            };
                            (x + n) as f32
                        }));
                        cids.push(entry.concept_id);
                        iids.push(img);
                        reps.push(r);
                    }
                }
            }
            let n = cids.len();
            EegTrialArray::new(
                data,
                [n, c_n, t_n],
                spec.sampling_rate_hz,
                channel_labels.clone(),
                cids,
                iids,
                reps,
            )
        };
        let train = make_split(SplitKind::Train)?;
        let test = make_split(SplitKind::Test)?;
        subjects.push(SubjectData {
            name: format!("sub-{:02}", s + 1),
            train,
            test,
        });
    }

    Ok(SyntheticDataset {
        spec: spec.clone(),
        catalog,
        embeddings,
        subjects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::View;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_concepts: 12,
            n_test_concepts: 3,
            n_images_per_concept: 3,
            n_repeats: 2,
            channels: 8,
            timepoints: 100,
            embedding_dim: 32,
            ..Default::default()
        }
    }

    #[test]
    fn noise_free_trials_of_a_concept_coincide() {
        let spec = SyntheticSpec {
            snr_db: None,
            trial_variability: 0.0,
            ..small()
        };
        let ds = generate_synthetic(&spec).unwrap();
        let tr = &ds.subjects[0].train;
        for i in 0..tr.n_trials {
            for j in 0..tr.n_trials {
                if tr.concept_ids[i] == tr.concept_ids[j] {
                    assert_eq!(tr.trial(i), tr.trial(j));
                }
            }
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a.embeddings, b.embeddings);
        assert_eq!(a.subjects[0].train, b.subjects[0].train);
        assert_eq!(a.subjects[0].test, b.subjects[0].test);
        assert_eq!(a.catalog, b.catalog);
        let c = generate_synthetic(&SyntheticSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a.embeddings, c.embeddings);
    }

    #[test]
    fn same_concept_embeddings_cluster() {
        let ds = generate_synthetic(&SyntheticSpec { n_concepts: 30, ..small() }).unwrap();
        let rows = ds.catalog.row_index();
        let mut owner = vec![0; ds.embeddings.len()];
        for (cid, (start, n)) in &rows {
            owner[*start..start + n].fill(*cid);
        }
        for view in [View::Contour, View::Object, View::Context] {
            let (mut same, mut n_same, mut diff, mut n_diff) = (0.0, 0, 0.0, 0);
            for i in 0..owner.len() {
                for j in i + 1..owner.len() {
                    let a = ds.embeddings.view(i, view);
                    let b = ds.embeddings.view(j, view);
                    let cos: f64 = a.iter().zip(b).map(|(x, y)| (*x as f64) * (*y as f64)).sum();
                    if owner[i] == owner[j] {
                        same += cos;
                        n_same += 1;
                    } else {
                        diff += cos;
                        n_diff += 1;
                    }
                }
            }
            let (same, diff) = (same / n_same as f64, diff / n_diff as f64);
            assert!(same > 0.85, "{view:?}: within-concept mean {same}");
            assert!(diff.abs() < 0.2, "{view:?}: cross-concept mean {diff}");
        }
    }

    #[test]
    fn layout_sizes() {
        let spec = small();
        let ds = generate_synthetic(&spec).unwrap();
        let s = &ds.subjects[0];
        assert_eq!(s.train.n_trials, 9 * 3 * 2);
        assert_eq!(s.test.n_trials, 3 * 2);
        assert_eq!(ds.embeddings.len(), 9 * 3 + 3);
        assert_eq!(ds.catalog.concepts_in(SplitKind::Test).count(), 3);
    }

    #[test]
    fn spec_errors() {
        let bad = SyntheticSpec {
            latent_dims: LatentDims { contour: 40, object: 2, context: 2 },
            ..small()
        };
        assert!(matches!(generate_synthetic(&bad), Err(Error::SyntheticSpec(_))));
        let bad = SyntheticSpec { n_repeats: 0, ..small() };
        assert!(generate_synthetic(&bad).is_err());
    }

    #[test]
    fn null_snr_parses_as_noise_off() {
        let s: SyntheticSpec = serde_json::from_str(r#"{"snr_db": null}"#).unwrap();
        assert_eq!(s.snr_db, None);
        let s: SyntheticSpec = serde_json::from_str("{}").unwrap();
        assert_eq!(s.snr_db, Some(0.0));
        assert!(serde_json::from_str::<SyntheticSpec>(r#"{"bogus": 1}"#).is_err());
    }
}
