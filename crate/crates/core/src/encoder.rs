//! Three parallel spatiotemporal convolution streams turning an EEG epoch
//! `[C × T]` into three token sequences `[L × m]`, one per hierarchy level.
//!
//! Each stream applies temporal conv → average pool → batch-norm → ELU →
//! spatial conv → batch-norm → ELU → 1×1 projection → dropout. Temporal
//! convolution and pooling are both linear, so they are evaluated together:
//! the input is first reduced to pool-weighted patches ([`Patches`]), shared
//! by all streams, and each stream then needs a single GEMM with its kernel.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{gemm_nn, gemm_nt, gemm_tn};
use crate::nn::{elu, elu_backward_from_output, join, BatchNorm, BnCache, DropoutMask, Linear, Mode, Param, Parameterized};
use crate::{Error, Result, Scalar};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const ELU_ALPHA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    /// One average pool with kernel `pool_kernel` and stride `pool_stride`.
    #[default]
    Single,
    /// Average pool `pool_kernel` (stride 1) followed by average pool
    /// `pool_stride` (stride `pool_stride`).
    Double,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StConvConfig {
    pub temporal_kernel: usize,
    pub temporal_stride: usize,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub pool_mode: PoolMode,
    pub n_filters: usize,
    pub channels: usize,
    pub proj_dim: usize,
    pub dropout: f64,
}

impl Default for StConvConfig {
    fn default() -> Self {
        Self {
            temporal_kernel: 25,
            temporal_stride: 1,
            pool_kernel: 51,
            pool_stride: 5,
            pool_mode: PoolMode::Single,
            n_filters: 40,
            channels: 63,
            proj_dim: 40,
            dropout: 0.5,
        }
    }
}

impl StConvConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("temporal_kernel", self.temporal_kernel),
            ("temporal_stride", self.temporal_stride),
            ("pool_kernel", self.pool_kernel),
            ("pool_stride", self.pool_stride),
            ("n_filters", self.n_filters),
            ("channels", self.channels),
            ("proj_dim", self.proj_dim),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Config(format!("encoder.{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("encoder.dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }

    /// Width of the temporal-conv output for `t` input samples.
    pub fn conv_width(&self, t: usize) -> Result<usize> {
        if t < self.temporal_kernel {
            return Err(Error::Shape(format!(
                "temporal conv: T = {t} is shorter than the kernel width {}",
                self.temporal_kernel
            )));
        }
        Ok((t - self.temporal_kernel) / self.temporal_stride + 1)
    }

    /// Number of output tokens `L` for `t` input samples.
    pub fn token_count(&self, t: usize) -> Result<usize> {
        let w = self.conv_width(t)?;
        match self.pool_mode {
            PoolMode::Single => {
                if w < self.pool_kernel {
                    return Err(Error::Shape(format!(
                        "average pool: conv output width {w} is shorter than the pool kernel {}",
                        self.pool_kernel
                    )));
                }
                Ok((w - self.pool_kernel) / self.pool_stride + 1)
            }
            PoolMode::Double => {
                if w < self.pool_kernel {
                    return Err(Error::Shape(format!(
                        "first average pool: conv output width {w} is shorter than the pool kernel {}",
                        self.pool_kernel
                    )));
                }
                let p1 = w - self.pool_kernel + 1;
                if p1 < self.pool_stride {
                    return Err(Error::Shape(format!(
                        "second average pool: width {p1} is shorter than the pool kernel {}",
                        self.pool_stride
                    )));
                }
                Ok((p1 - self.pool_stride) / self.pool_stride + 1)
            }
        }
    }

    /// Per token, the conv-output positions it averages and their weights.
    pub fn pool_taps(&self, t: usize) -> Result<Vec<Vec<(usize, f64)>>> {
        let l = self.token_count(t)?;
        let (kp, sp) = (self.pool_kernel, self.pool_stride);
        Ok((0..l)
            .map(|j| match self.pool_mode {
                PoolMode::Single => (0..kp).map(|q| (j * sp + q, 1.0 / kp as f64)).collect(),
                PoolMode::Double => {
                    let mut w = vec![0.0; sp + kp - 1];
                    for u in 0..sp {
                        for q in 0..kp {
                            w[u + q] += 1.0 / (kp * sp) as f64;
                        }
                    }
                    w.into_iter().enumerate().map(|(o, v)| (j * sp + o, v)).collect()
                }
            })
            .collect())
    }

    /// Learnable scalars of one stream.
    pub fn stream_parameters(&self) -> usize {
        let f = self.n_filters;
        f * self.temporal_kernel + 2 * f + f * f * self.channels + 2 * f + f * self.proj_dim + self.proj_dim
    }
}

/// Pool-weighted input patches for a batch, layout `[B][L][K_t][C]`:
/// `Q[b][j][k][c] = Σ_taps w · E_b[c, x·S_t + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patches<S> {
    pub data: Vec<S>,
    pub batch: usize,
    pub tokens: usize,
    pub kernel: usize,
    pub channels: usize,
}

impl<S: Scalar> Patches<S> {
    /// `eeg` holds `batch` epochs, each `[C × T]` row-major.
    pub fn compute(cfg: &StConvConfig, eeg: &[S], batch: usize, t: usize) -> Result<Self> {
        let c_n = cfg.channels;
        if eeg.len() != batch * c_n * t {
            return Err(Error::Shape(format!(
                "EEG batch has {} values, expected {batch} × {c_n} × {t}",
                eeg.len()
            )));
        }
        let taps: Vec<Vec<(usize, S)>> = cfg
            .pool_taps(t)?
            .into_iter()
            .map(|v| v.into_iter().map(|(x, w)| (x, S::lit(w))).collect())
            .collect();
        let (l, k_n, st) = (taps.len(), cfg.temporal_kernel, cfg.temporal_stride);
        let per = l * k_n * c_n;
        let mut data = vec![S::zero(); batch * per];
        data.par_chunks_mut(per.max(1)).enumerate().for_each(|(b, out)| {
            let e = &eeg[b * c_n * t..(b + 1) * c_n * t];
            let mut acc = vec![S::zero(); k_n];
            for (j, tj) in taps.iter().enumerate() {
                for c in 0..c_n {
                    let row = &e[c * t..(c + 1) * t];
                    acc.fill(S::zero());
                    for &(x, w) in tj {
                        let seg = &row[x * st..x * st + k_n];
                        for (a, &v) in acc.iter_mut().zip(seg) {
                            *a += w * v;
                        }
                    }
                    for (k, &a) in acc.iter().enumerate() {
                        out[(j * k_n + k) * c_n + c] = a;
                    }
                }
            }
        });
        Ok(Self {
            data,
            batch,
            tokens: l,
            kernel: k_n,
            channels: c_n,
        })
    }

    pub fn rows(&self) -> usize {
        self.batch * self.tokens
    }

    fn row(&self, r: usize) -> &[S] {
        let n = self.kernel * self.channels;
        &self.data[r * n..(r + 1) * n]
    }
}

/// `L × m` token sequence of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence<S> {
    pub len: usize,
    pub width: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> TokenSequence<S> {
    pub fn token(&self, i: usize) -> &[S] {
        &self.data[i * self.width..(i + 1) * self.width]
    }
}

/// One STConv stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StConvStream<S> {
    pub config: StConvConfig,
    /// `[F, K_t]`
    pub temporal: Param<S>,
    pub bn1: BatchNorm<S>,
    /// `[F, F·C]`: spatial kernel spanning all electrodes of every filter map.
    pub spatial: Param<S>,
    pub bn2: BatchNorm<S>,
    pub proj: Linear<S>,
}

#[derive(Debug, Clone)]
pub struct StreamCache<S> {
    bn1: BnCache<S>,
    h1: Vec<S>,
    bn2: BnCache<S>,
    h2: Vec<S>,
    mask: Option<DropoutMask<S>>,
}

impl<S: Scalar> StConvStream<S> {
    pub fn new<R: Rng + ?Sized>(config: &StConvConfig, rng: &mut R) -> Self {
        let (f, k, c) = (config.n_filters, config.temporal_kernel, config.channels);
        Self {
            config: config.clone(),
            temporal: Param::uniform(&[f, k], 1.0 / (k as f64).sqrt(), rng),
            bn1: BatchNorm::new(f, BN_EPS, BN_MOMENTUM),
            spatial: Param::uniform(&[f, f * c], 1.0 / ((f * c) as f64).sqrt(), rng),
            bn2: BatchNorm::new(f, BN_EPS, BN_MOMENTUM),
            proj: Linear::new(f, config.proj_dim, rng),
        }
    }

    /// Forward over a batch; returns tokens `[B·L × m]`.
    pub fn forward<R: Rng + ?Sized>(&self, q: &Patches<S>, mode: Mode, rng: &mut R) -> (Vec<S>, StreamCache<S>) {
        let (f, k, c) = (self.config.n_filters, q.kernel, q.channels);
        let rows = q.rows();
        let train = mode == Mode::Train;
        let alpha = S::lit(ELU_ALPHA);

        let mut a1 = vec![S::zero(); rows * f * c];
        a1.par_chunks_mut(f * c).enumerate().for_each(|(r, out)| {
            gemm_nn(&self.temporal.value, q.row(r), out, f, k, c, false);
        });
        let (mut h1, bn1) = self.bn1.forward(&a1, rows, c, train);
        h1.iter_mut().for_each(|v| *v = elu(*v, alpha));

        let mut a2 = vec![S::zero(); rows * f];
        gemm_nt(&h1, &self.spatial.value, &mut a2, rows, f * c, f, false);
        let (mut h2, bn2) = self.bn2.forward(&a2, rows, 1, train);
        h2.iter_mut().for_each(|v| *v = elu(*v, alpha));

        let mut y = self.proj.forward(&h2);
        let mask = (train && self.config.dropout > 0.0).then(|| {
            let m = DropoutMask::sample(y.len(), self.config.dropout, rng);
            m.apply(&mut y);
            m
        });
        (y, StreamCache { bn1, h1, bn2, h2, mask })
    }

    /// Accumulates parameter gradients given `dy = ∂loss/∂tokens`.
    pub fn backward(&mut self, q: &Patches<S>, cache: &StreamCache<S>, dy: &[S]) {
        let (f, k, c) = (self.config.n_filters, q.kernel, q.channels);
        let rows = q.rows();
        let alpha = S::lit(ELU_ALPHA);
        let mut dy = dy.to_vec();
        if let Some(m) = &cache.mask {
            m.apply(&mut dy);
        }
        let mut d = self.proj.backward(&cache.h2, &dy);
        for (g, &h) in d.iter_mut().zip(&cache.h2) {
            *g = elu_backward_from_output(h, *g, alpha);
        }
        let da2 = self.bn2.backward(&cache.bn2, &d, rows, 1);
        gemm_tn(&da2, &cache.h1, &mut self.spatial.grad, f, rows, f * c, true);
        let mut dh1 = vec![S::zero(); rows * f * c];
        gemm_nn(&da2, &self.spatial.value, &mut dh1, rows, f, f * c, false);
        for (g, &h) in dh1.iter_mut().zip(&cache.h1) {
            *g = elu_backward_from_output(h, *g, alpha);
        }
        let da1 = self.bn1.backward(&cache.bn1, &dh1, rows, c);
        for r in 0..rows {
            gemm_nt(&da1[r * f * c..(r + 1) * f * c], q.row(r), &mut self.temporal.grad, f, c, k, true);
        }
    }

    /// Folds the batch statistics of a training forward into the running
    /// estimates.
    pub fn commit(&mut self, cache: &StreamCache<S>) {
        self.bn1.commit(&cache.bn1);
        self.bn2.commit(&cache.bn2);
    }

    /// Single-epoch convenience: `eeg` is `[C × T]`.
    pub fn forward_epoch<R: Rng + ?Sized>(&self, eeg: &[S], t: usize, mode: Mode, rng: &mut R) -> Result<TokenSequence<S>> {
        let q = Patches::compute(&self.config, eeg, 1, t)?;
        let (data, _) = self.forward(&q, mode, rng);
        Ok(TokenSequence {
            len: q.tokens,
            width: self.config.proj_dim,
            data,
        })
    }
}

impl<S: Scalar> Parameterized<S> for StConvStream<S> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<S>)) {
        f(&join(prefix, "temporal"), &self.temporal);
        self.bn1.visit_params(&join(prefix, "bn1"), f);
        f(&join(prefix, "spatial"), &self.spatial);
        self.bn2.visit_params(&join(prefix, "bn2"), f);
        self.proj.visit_params(&join(prefix, "proj"), f);
    }
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        f(&join(prefix, "temporal"), &mut self.temporal);
        self.bn1.visit_params_mut(&join(prefix, "bn1"), f);
        f(&join(prefix, "spatial"), &mut self.spatial);
        self.bn2.visit_params_mut(&join(prefix, "bn2"), f);
        self.proj.visit_params_mut(&join(prefix, "proj"), f);
    }
    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &[S])) {
        self.bn1.visit_buffers(&join(prefix, "bn1"), f);
        self.bn2.visit_buffers(&join(prefix, "bn2"), f);
    }
    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Vec<S>)) {
        self.bn1.visit_buffers_mut(&join(prefix, "bn1"), f);
        self.bn2.visit_buffers_mut(&join(prefix, "bn2"), f);
    }
}

/// The three streams, in view order contour, object, context.
#[derive(Debug, Clone, PartialEq)]
pub struct TriStreamEncoder<S> {
    pub streams: [StConvStream<S>; 3],
}

pub type TriCache<S> = [StreamCache<S>; 3];

impl<S: Scalar> TriStreamEncoder<S> {
    /// Streams are initialized one after another from `rng`, so they never
    /// share weights.
    pub fn new<R: Rng + ?Sized>(config: &StConvConfig, rng: &mut R) -> Self {
        Self {
            streams: [
                StConvStream::new(config, rng),
                StConvStream::new(config, rng),
                StConvStream::new(config, rng),
            ],
        }
    }

    pub fn config(&self) -> &StConvConfig {
        &self.streams[0].config
    }

    pub fn forward<R: Rng + ?Sized>(&self, q: &Patches<S>, mode: Mode, rng: &mut R) -> ([Vec<S>; 3], TriCache<S>) {
        let (b, cb) = self.streams[0].forward(q, mode, rng);
        let (f, cf) = self.streams[1].forward(q, mode, rng);
        let (r, cr) = self.streams[2].forward(q, mode, rng);
        ([b, f, r], [cb, cf, cr])
    }

    pub fn backward(&mut self, q: &Patches<S>, cache: &TriCache<S>, dy: [&[S]; 3]) {
        for ((s, c), d) in self.streams.iter_mut().zip(cache).zip(dy) {
            s.backward(q, c, d);
        }
    }

    pub fn commit(&mut self, cache: &TriCache<S>) {
        for (s, c) in self.streams.iter_mut().zip(cache) {
            s.commit(c);
        }
    }
}

/// Encodes one epoch `[C × T]` into `(F_b^init, F_f^init, F_r^init)`.
pub fn tri_encode<S: Scalar, R: Rng + ?Sized>(
    eeg: &[S],
    t: usize,
    encoder: &TriStreamEncoder<S>,
    mode: Mode,
    rng: &mut R,
) -> Result<[TokenSequence<S>; 3]> {
    let q = Patches::compute(encoder.config(), eeg, 1, t)?;
    let (out, _) = encoder.forward(&q, mode, rng);
    let width = encoder.config().proj_dim;
    Ok(out.map(|data| TokenSequence {
        len: q.tokens,
        width,
        data,
    }))
}

impl<S: Scalar> Parameterized<S> for TriStreamEncoder<S> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<S>)) {
        for (s, n) in self.streams.iter().zip(["b", "f", "r"]) {
            s.visit_params(&join(prefix, n), f);
        }
    }
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        for (s, n) in self.streams.iter_mut().zip(["b", "f", "r"]) {
            s.visit_params_mut(&join(prefix, n), f);
        }
    }
    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &[S])) {
        for (s, n) in self.streams.iter().zip(["b", "f", "r"]) {
            s.visit_buffers(&join(prefix, n), f);
        }
    }
    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Vec<S>)) {
        for (s, n) in self.streams.iter_mut().zip(["b", "f", "r"]) {
            s.visit_buffers_mut(&join(prefix, n), f);
        }
    }
}
