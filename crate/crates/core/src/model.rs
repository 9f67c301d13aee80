//! The full EEG branch: three encoder streams, hierarchical integration,
//! per-view flatten projections, and the contrastive temperature.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cahi::{Cahi, CahiCache, CahiConfig};
use crate::encoder::{Patches, StConvConfig, TriCache, TriStreamEncoder};
use crate::nn::{join, Linear, Mode, Param, Parameterized};
use crate::objective::{default_logit_scale, infonce_loss, scatter_views, select_views, Direction, ViewSet, MAX_LOGIT_SCALE_EXP};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: StConvConfig,
    pub cahi: CahiConfig,
    /// Samples per EEG epoch.
    pub timepoints: usize,
    /// Width `d` of each hierarchical feature (must equal the image
    /// embedding width).
    pub embed_dim: usize,
    pub logit_scale_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: StConvConfig::default(),
            cahi: CahiConfig::default(),
            timepoints: 100,
            embed_dim: 1024,
            logit_scale_init: default_logit_scale(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.encoder.token_count(self.timepoints)?;
        self.cahi.validate(self.encoder.proj_dim)?;
        if self.embed_dim == 0 {
            return Err(Error::Config("model.embed_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn tokens(&self) -> Result<usize> {
        self.encoder.token_count(self.timepoints)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalModel<S> {
    pub config: ModelConfig,
    pub encoder: TriStreamEncoder<S>,
    pub cahi: Cahi<S>,
    /// Flatten projections `L·m → d` for b, f, r.
    pub heads: [Linear<S>; 3],
    /// `[1]`; `α = exp(logit_scale)`.
    pub logit_scale: Param<S>,
}

#[derive(Debug, Clone)]
pub struct ModelCache<S> {
    batch: usize,
    enc: TriCache<S>,
    tokens: [Vec<S>; 3],
    integrated: [Vec<S>; 3],
    cahi: CahiCache<S>,
}

const VIEW_NAMES: [&str; 3] = ["b", "f", "r"];

impl<S: Scalar> HierarchicalModel<S> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = config.tokens()?;
        let m = config.encoder.proj_dim;
        let encoder = TriStreamEncoder::new(&config.encoder, &mut rng);
        let cahi = Cahi::new(m, &config.cahi, &mut rng);
        let heads = [
            Linear::new(l * m, config.embed_dim, &mut rng),
            Linear::new(l * m, config.embed_dim, &mut rng),
            Linear::new(l * m, config.embed_dim, &mut rng),
        ];
        Ok(Self {
            config: config.clone(),
            encoder,
            cahi,
            heads,
            logit_scale: Param::filled(&[1], S::lit(config.logit_scale_init)),
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn patches(&self, eeg: &[S], batch: usize) -> Result<Patches<S>> {
        Patches::compute(&self.config.encoder, eeg, batch, self.config.timepoints)
    }

    /// Features `[B × 3d]` (`F_b ‖ F_f ‖ F_r` per row).
    pub fn forward<R: Rng + ?Sized>(&self, q: &Patches<S>, mode: Mode, rng: &mut R) -> Result<(Vec<S>, ModelCache<S>)> {
        let batch = q.batch;
        let d = self.embed_dim();
        let (tokens, enc) = self.encoder.forward(q, mode, rng);
        let (integrated, cahi) = self.cahi.forward(&tokens, batch, mode, rng)?;
        let mut out = vec![S::zero(); batch * 3 * d];
        for (v, head) in self.heads.iter().enumerate() {
            let y = head.forward(&integrated[v]);
            for s in 0..batch {
                out[s * 3 * d + v * d..s * 3 * d + (v + 1) * d].copy_from_slice(&y[s * d..(s + 1) * d]);
            }
        }
        Ok((
            out,
            ModelCache {
                batch,
                enc,
                tokens,
                integrated,
                cahi,
            },
        ))
    }

    /// Accumulates gradients of all network weights given `∂loss/∂features`.
    pub fn backward(&mut self, q: &Patches<S>, cache: &ModelCache<S>, dfeat: &[S]) {
        let (batch, d) = (cache.batch, self.embed_dim());
        let mut dint: [Vec<S>; 3] = Default::default();
        for (v, head) in self.heads.iter_mut().enumerate() {
            let dy: Vec<S> = (0..batch)
                .flat_map(|s| dfeat[s * 3 * d + v * d..s * 3 * d + (v + 1) * d].iter().copied())
                .collect();
            dint[v] = head.backward(&cache.integrated[v], &dy);
        }
        let dtok = self.cahi.backward(&cache.tokens, &cache.integrated, &cache.cahi, dint);
        self.encoder.backward(q, &cache.enc, [&dtok[0], &dtok[1], &dtok[2]]);
    }

    /// Folds batch-norm statistics of a training forward into the running
    /// estimates.
    pub fn commit(&mut self, cache: &ModelCache<S>) {
        self.encoder.commit(&cache.enc);
    }

    /// Training step core: forward in train mode, contrastive loss over the
    /// selected views against `targets` (`[B × 3d]`), backward. Gradients
    /// are accumulated; the caller zeroes them.
    pub fn loss_and_backward<R: Rng + ?Sized>(
        &mut self,
        q: &Patches<S>,
        targets: &[S],
        views: ViewSet,
        direction: Direction,
        rng: &mut R,
    ) -> Result<(S, ModelCache<S>)> {
        let (feat, cache) = self.forward(q, Mode::Train, rng)?;
        let (b, d) = (q.batch, self.embed_dim());
        let f = select_views(&feat, b, d, views);
        let c = select_views(targets, b, d, views);
        let out = infonce_loss(&f, &c, views.len() * d, self.logit_scale.value[0], direction)?;
        self.logit_scale.grad[0] += out.grad_logit_scale;
        let dfeat = scatter_views(&out.grad_eeg, b, d, views);
        self.backward(q, &cache, &dfeat);
        Ok((out.loss, cache))
    }

    /// Contrastive loss in eval mode (no gradients).
    pub fn eval_loss(&self, q: &Patches<S>, targets: &[S], views: ViewSet, direction: Direction) -> Result<S> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (feat, _) = self.forward(q, Mode::Eval, &mut rng)?;
        let (b, d) = (q.batch, self.embed_dim());
        let f = select_views(&feat, b, d, views);
        let c = select_views(targets, b, d, views);
        Ok(infonce_loss(&f, &c, views.len() * d, self.logit_scale.value[0], direction)?.loss)
    }

    /// Eval-mode features for `n` epochs stored contiguously, in chunks.
    pub fn encode(&self, eeg: &[S], n: usize) -> Result<Vec<S>> {
        const CHUNK: usize = 256;
        let per = self.config.encoder.channels * self.config.timepoints;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut out = Vec::with_capacity(n * 3 * self.embed_dim());
        for start in (0..n).step_by(CHUNK) {
            let b = CHUNK.min(n - start);
            let q = self.patches(&eeg[start * per..(start + b) * per], b)?;
            out.extend(self.forward(&q, Mode::Eval, &mut rng)?.0);
        }
        Ok(out)
    }

    /// Keeps `α = exp(logit_scale) ≤ 100`.
    pub fn clamp_logit_scale(&mut self) {
        let hi = S::lit(MAX_LOGIT_SCALE_EXP.ln());
        if self.logit_scale.value[0] > hi {
            self.logit_scale.value[0] = hi;
        }
    }

    /// Same weights and running statistics at another precision.
    pub fn cast<T: Scalar>(&self) -> Result<HierarchicalModel<T>> {
        let mut out = HierarchicalModel::<T>::new(&self.config, 0)?;
        let mut values: Vec<(String, Vec<f64>)> = Vec::new();
        self.visit_params("", &mut |n, p| values.push((n.to_string(), p.value.iter().map(|v| v.to_f64_lossy()).collect())));
        let mut buffers: Vec<Vec<f64>> = Vec::new();
        self.visit_buffers("", &mut |_, b| buffers.push(b.iter().map(|v| v.to_f64_lossy()).collect()));
        let mut it = values.into_iter();
        out.visit_params_mut("", &mut |n, p| {
            let (name, v) = it.next().expect("same architecture");
            debug_assert_eq!(name, n);
            p.value = v.into_iter().map(T::lit).collect();
        });
        let mut it = buffers.into_iter();
        out.visit_buffers_mut("", &mut |_, b| *b = it.next().expect("same architecture").into_iter().map(T::lit).collect());
        Ok(out)
    }

    /// Named parameter counts per top-level module.
    pub fn parameter_breakdown(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        self.visit_params("", &mut |name, p| {
            let parts: Vec<&str> = name.split('.').collect();
            let key = match parts[0] {
                "encoder" | "heads" => parts[..2].join("."),
                "cahi" => parts[..2].join("."),
                other => other.to_string(),
            };
            match out.iter_mut().find(|(k, _)| *k == key) {
                Some((_, n)) => *n += p.numel(),
                None => out.push((key, p.numel())),
            }
        });
        out
    }
}

impl<S: Scalar> Parameterized<S> for HierarchicalModel<S> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<S>)) {
        self.encoder.visit_params(&join(prefix, "encoder"), f);
        self.cahi.visit_params(&join(prefix, "cahi"), f);
        for (h, n) in self.heads.iter().zip(VIEW_NAMES) {
            h.visit_params(&join(prefix, &format!("heads.{n}")), f);
        }
        f(&join(prefix, "logit_scale"), &self.logit_scale);
    }
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        self.encoder.visit_params_mut(&join(prefix, "encoder"), f);
        self.cahi.visit_params_mut(&join(prefix, "cahi"), f);
        for (h, n) in self.heads.iter_mut().zip(VIEW_NAMES) {
            h.visit_params_mut(&join(prefix, &format!("heads.{n}")), f);
        }
        f(&join(prefix, "logit_scale"), &mut self.logit_scale);
    }
    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &[S])) {
        self.encoder.visit_buffers(&join(prefix, "encoder"), f);
    }
    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Vec<S>)) {
        self.encoder.visit_buffers_mut(&join(prefix, "encoder"), f);
    }
}
