//! Cross-attention hierarchical integration: contour tokens refine object
//! tokens, refined object tokens refine context tokens, and each view is
//! then flattened and projected to the embedding width.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::TokenSequence;
use crate::linalg::{gemm_nn, gemm_nt, gemm_tn};
use crate::nn::{join, DropoutMask, LayerNorm, LnCache, Linear, Mode, Param, Parameterized};
use crate::{Error, Result, Scalar};

pub const LN_EPS: f64 = 1e-5;

/// Which stream supplies the attention values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KvSource {
    /// Keys and values from the lower level `a`, queries from `b`.
    #[default]
    Lower,
    /// Keys from `a`; queries and values from `b` (requires equal lengths).
    ValueFromQuery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CahiConfig {
    /// `false` bypasses integration entirely (encoder tokens go straight to
    /// the flatten projection).
    pub enabled: bool,
    pub n_layers: usize,
    pub heads: usize,
    /// Per-head width; `None` means `floor(m / heads)`.
    pub head_dim: Option<usize>,
    pub kv_source: KvSource,
    pub dropout: f64,
}

impl Default for CahiConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            n_layers: 1,
            heads: 3,
            head_dim: None,
            kv_source: KvSource::Lower,
            dropout: 0.5,
        }
    }
}

impl CahiConfig {
    pub fn active(&self) -> bool {
        self.enabled && self.n_layers > 0
    }

    pub fn head_dim_for(&self, width: usize) -> usize {
        self.head_dim.unwrap_or(width / self.heads.max(1))
    }

    pub fn validate(&self, width: usize) -> Result<()> {
        if self.heads == 0 {
            return Err(Error::Config("cahi.heads must be positive".into()));
        }
        if self.head_dim_for(width) == 0 {
            return Err(Error::Config(format!(
                "cahi: head width is zero for model width {width} and {} heads",
                self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("cahi.dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// Multi-head cross-attention with full-width per-head projections.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadCrossAttention<S> {
    pub heads: usize,
    pub head_dim: usize,
    pub kv_source: KvSource,
    /// `[h, m, d_k]`
    pub wq: Param<S>,
    pub wk: Param<S>,
    pub wv: Param<S>,
    /// `[h·d_k, m]`
    pub wo: Param<S>,
    /// `[m]`
    pub bo: Param<S>,
}

#[derive(Debug, Clone)]
pub struct AttnCache<S> {
    batch: usize,
    la: usize,
    lb: usize,
    /// per head, `[B·L × d_k]`
    q: Vec<Vec<S>>,
    k: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    /// per head, `[B × L_b × L_a]`
    p: Vec<Vec<S>>,
    /// `[B·L_b × h·d_k]`
    concat: Vec<S>,
}

impl<S: Scalar> AttnCache<S> {
    /// Attention weights of head `h` for sample `b`, `[L_b × L_a]`.
    pub fn weights(&self, head: usize, b: usize) -> &[S] {
        let n = self.lb * self.la;
        &self.p[head][b * n..(b + 1) * n]
    }
}

impl<S: Scalar> MultiHeadCrossAttention<S> {
    pub fn new<R: Rng + ?Sized>(width: usize, heads: usize, head_dim: usize, kv_source: KvSource, rng: &mut R) -> Self {
        let hd = heads * head_dim;
        let xavier = (6.0 / (width + hd) as f64).sqrt();
        let wq = Param::uniform(&[heads, width, head_dim], xavier, rng);
        let wk = Param::uniform(&[heads, width, head_dim], xavier, rng);
        let wv = Param::uniform(&[heads, width, head_dim], xavier, rng);
        let wo = Param::uniform(&[hd, width], 1.0 / (hd as f64).sqrt(), rng);
        Self {
            heads,
            head_dim,
            kv_source,
            wq,
            wk,
            wv,
            wo,
            bo: Param::zeros(&[width]),
        }
    }

    pub fn width(&self) -> usize {
        self.bo.numel()
    }

    fn head_slice(p: &[S], i: usize, m: usize, dk: usize) -> &[S] {
        &p[i * m * dk..(i + 1) * m * dk]
    }

    /// `a`: `[B·L_a × m]`, `b`: `[B·L_b × m]`; returns `[B·L_b × m]`.
    pub fn forward(&self, a: &[S], b: &[S], batch: usize) -> Result<(Vec<S>, AttnCache<S>)> {
        let (m, dk, h) = (self.width(), self.head_dim, self.heads);
        if batch == 0 || !a.len().is_multiple_of(batch * m) || !b.len().is_multiple_of(batch * m) {
            return Err(Error::Shape(format!(
                "cross-attention inputs of {} and {} values do not split into {batch} samples of width {m}",
                a.len(),
                b.len()
            )));
        }
        let (la, lb) = (a.len() / (batch * m), b.len() / (batch * m));
        let v_src = match self.kv_source {
            KvSource::Lower => a,
            KvSource::ValueFromQuery => {
                if la != lb {
                    return Err(Error::Shape(format!(
                        "value_from_query needs equal token counts, got {la} keys and {lb} queries"
                    )));
                }
                b
            }
        };
        let scale = S::one() / S::from_usize_lossy(dk).sqrt();
        let mut cache = AttnCache {
            batch,
            la,
            lb,
            q: Vec::with_capacity(h),
            k: Vec::with_capacity(h),
            v: Vec::with_capacity(h),
            p: Vec::with_capacity(h),
            concat: vec![S::zero(); batch * lb * h * dk],
        };
        for i in 0..h {
            let mut q = vec![S::zero(); batch * lb * dk];
            let mut k = vec![S::zero(); batch * la * dk];
            let mut v = vec![S::zero(); batch * la * dk];
            gemm_nn(b, Self::head_slice(&self.wq.value, i, m, dk), &mut q, batch * lb, m, dk, false);
            gemm_nn(a, Self::head_slice(&self.wk.value, i, m, dk), &mut k, batch * la, m, dk, false);
            gemm_nn(v_src, Self::head_slice(&self.wv.value, i, m, dk), &mut v, batch * la, m, dk, false);
            let mut p = vec![S::zero(); batch * lb * la];
            let mut o = vec![S::zero(); lb * dk];
            for s in 0..batch {
                let ps = &mut p[s * lb * la..(s + 1) * lb * la];
                gemm_nt(&q[s * lb * dk..(s + 1) * lb * dk], &k[s * la * dk..(s + 1) * la * dk], ps, lb, dk, la, false);
                for row in ps.chunks_mut(la) {
                    let mx = row.iter().fold(S::neg_infinity(), |acc, &x| acc.max(x * scale));
                    if !mx.is_finite() {
                        return Err(Error::NonFiniteLogits("attention scores are not finite".into()));
                    }
                    let mut z = S::zero();
                    for x in row.iter_mut() {
                        *x = (*x * scale - mx).exp();
                        z += *x;
                    }
                    row.iter_mut().for_each(|x| *x /= z);
                }
                gemm_nn(ps, &v[s * la * dk..(s + 1) * la * dk], &mut o, lb, la, dk, false);
                for t in 0..lb {
                    let dst = ((s * lb + t) * h + i) * dk;
                    cache.concat[dst..dst + dk].copy_from_slice(&o[t * dk..(t + 1) * dk]);
                }
            }
            cache.q.push(q);
            cache.k.push(k);
            cache.v.push(v);
            cache.p.push(p);
        }
        let rows = batch * lb;
        let mut out = vec![S::zero(); rows * m];
        gemm_nn(&cache.concat, &self.wo.value, &mut out, rows, h * dk, m, false);
        for r in 0..rows {
            for (o, &bias) in out[r * m..(r + 1) * m].iter_mut().zip(&self.bo.value) {
                *o += bias;
            }
        }
        Ok((out, cache))
    }

    /// Single-sample form over token sequences.
    pub fn apply(&self, a: &TokenSequence<S>, b: &TokenSequence<S>) -> Result<TokenSequence<S>> {
        if a.width != self.width() || b.width != self.width() {
            return Err(Error::Shape(format!(
                "cross-attention width mismatch: a has {}, b has {}, layer expects {}",
                a.width,
                b.width,
                self.width()
            )));
        }
        let (data, _) = self.forward(&a.data, &b.data, 1)?;
        Ok(TokenSequence {
            len: b.len,
            width: b.width,
            data,
        })
    }

    /// Accumulates parameter gradients; returns `(∂/∂a, ∂/∂b)`.
    pub fn backward(&mut self, a: &[S], b: &[S], cache: &AttnCache<S>, dout: &[S]) -> (Vec<S>, Vec<S>) {
        let (m, dk, h) = (self.width(), self.head_dim, self.heads);
        let (batch, la, lb) = (cache.batch, cache.la, cache.lb);
        let rows = batch * lb;
        let scale = S::one() / S::from_usize_lossy(dk).sqrt();

        gemm_tn(&cache.concat, dout, &mut self.wo.grad, h * dk, rows, m, true);
        for r in 0..rows {
            for (g, &d) in self.bo.grad.iter_mut().zip(&dout[r * m..(r + 1) * m]) {
                *g += d;
            }
        }
        let mut dconcat = vec![S::zero(); rows * h * dk];
        gemm_nt(dout, &self.wo.value, &mut dconcat, rows, m, h * dk, false);

        let mut da = vec![S::zero(); a.len()];
        let mut db = vec![S::zero(); b.len()];
        let from_query = self.kv_source == KvSource::ValueFromQuery;
        let v_src = if from_query { b } else { a };
        for i in 0..h {
            let (q, k, v, p) = (&cache.q[i], &cache.k[i], &cache.v[i], &cache.p[i]);
            let mut dq = vec![S::zero(); batch * lb * dk];
            let mut dk_ = vec![S::zero(); batch * la * dk];
            let mut dv = vec![S::zero(); batch * la * dk];
            let mut d_o = vec![S::zero(); lb * dk];
            let mut dp = vec![S::zero(); lb * la];
            for s in 0..batch {
                for t in 0..lb {
                    let src = ((s * lb + t) * h + i) * dk;
                    d_o[t * dk..(t + 1) * dk].copy_from_slice(&dconcat[src..src + dk]);
                }
                let ps = &p[s * lb * la..(s + 1) * lb * la];
                let vs = &v[s * la * dk..(s + 1) * la * dk];
                gemm_nt(&d_o, vs, &mut dp, lb, dk, la, false);
                gemm_tn(ps, &d_o, &mut dv[s * la * dk..(s + 1) * la * dk], la, lb, dk, false);
                for t in 0..lb {
                    let pr = &ps[t * la..(t + 1) * la];
                    let dr = &mut dp[t * la..(t + 1) * la];
                    let dot: S = pr.iter().zip(dr.iter()).map(|(&x, &y)| x * y).sum();
                    for (d, &x) in dr.iter_mut().zip(pr) {
                        *d = x * (*d - dot) * scale;
                    }
                }
                gemm_nn(&dp, &k[s * la * dk..(s + 1) * la * dk], &mut dq[s * lb * dk..(s + 1) * lb * dk], lb, la, dk, false);
                gemm_tn(&dp, &q[s * lb * dk..(s + 1) * lb * dk], &mut dk_[s * la * dk..(s + 1) * la * dk], la, lb, dk, false);
            }
            let off = i * m * dk;
            gemm_tn(b, &dq, &mut self.wq.grad[off..off + m * dk], m, batch * lb, dk, true);
            gemm_tn(a, &dk_, &mut self.wk.grad[off..off + m * dk], m, batch * la, dk, true);
            gemm_tn(v_src, &dv, &mut self.wv.grad[off..off + m * dk], m, batch * la, dk, true);
            gemm_nt(&dq, &self.wq.value[off..off + m * dk], &mut db, batch * lb, dk, m, true);
            gemm_nt(&dk_, &self.wk.value[off..off + m * dk], &mut da, batch * la, dk, m, true);
            let dv_in = if from_query { &mut db } else { &mut da };
            gemm_nt(&dv, &self.wv.value[off..off + m * dk], dv_in, batch * la, dk, m, true);
        }
        (da, db)
    }
}

impl<S: Scalar> Parameterized<S> for MultiHeadCrossAttention<S> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<S>)) {
        f(&join(prefix, "wq"), &self.wq);
        f(&join(prefix, "wk"), &self.wk);
        f(&join(prefix, "wv"), &self.wv);
        f(&join(prefix, "wo"), &self.wo);
        f(&join(prefix, "bo"), &self.bo);
    }
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        f(&join(prefix, "wq"), &mut self.wq);
        f(&join(prefix, "wk"), &mut self.wk);
        f(&join(prefix, "wv"), &mut self.wv);
        f(&join(prefix, "wo"), &mut self.wo);
        f(&join(prefix, "bo"), &mut self.bo);
    }
}

/// `LayerNorm(b + Dropout(attention(a, b)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationBlock<S> {
    pub attn: MultiHeadCrossAttention<S>,
    pub norm: LayerNorm<S>,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct BlockCache<S> {
    attn: AttnCache<S>,
    mask: Option<DropoutMask<S>>,
    norm: LnCache<S>,
}

impl<S: Scalar> IntegrationBlock<S> {
    pub fn new<R: Rng + ?Sized>(width: usize, cfg: &CahiConfig, rng: &mut R) -> Self {
        Self {
            attn: MultiHeadCrossAttention::new(width, cfg.heads, cfg.head_dim_for(width), cfg.kv_source, rng),
            norm: LayerNorm::new(width, LN_EPS),
            dropout: cfg.dropout,
        }
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        a: &[S],
        b: &[S],
        batch: usize,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Vec<S>, BlockCache<S>)> {
        let (mut z, attn) = self.attn.forward(a, b, batch)?;
        let mask = (mode == Mode::Train && self.dropout > 0.0).then(|| {
            let mask = DropoutMask::sample(z.len(), self.dropout, rng);
            mask.apply(&mut z);
            mask
        });
        for (zi, &bi) in z.iter_mut().zip(b) {
            *zi += bi;
        }
        let (y, norm) = self.norm.forward(&z);
        Ok((y, BlockCache { attn, mask, norm }))
    }

    /// Returns `(∂/∂a, ∂/∂b)`.
    pub fn backward(&mut self, a: &[S], b: &[S], cache: &BlockCache<S>, dy: &[S]) -> (Vec<S>, Vec<S>) {
        let dz = self.norm.backward(&cache.norm, dy);
        let mut dattn = dz.clone();
        if let Some(m) = &cache.mask {
            m.apply(&mut dattn);
        }
        let (da, mut db) = self.attn.backward(a, b, &cache.attn, &dattn);
        for (d, &r) in db.iter_mut().zip(&dz) {
            *d += r;
        }
        (da, db)
    }
}

impl<S: Scalar> Parameterized<S> for IntegrationBlock<S> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<S>)) {
        self.attn.visit_params(&join(prefix, "attn"), f);
        self.norm.visit_params(&join(prefix, "norm"), f);
    }
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        self.attn.visit_params_mut(&join(prefix, "attn"), f);
        self.norm.visit_params_mut(&join(prefix, "norm"), f);
    }
}

/// Stacks of integration blocks for the two directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Cahi<S> {
    pub config: CahiConfig,
    /// contour → object
    pub to_object: Vec<IntegrationBlock<S>>,
    /// object → context
    pub to_context: Vec<IntegrationBlock<S>>,
}

#[derive(Debug, Clone)]
pub struct CahiCache<S> {
    /// Inputs and caches of each object block (`b` argument per layer).
    f_inputs: Vec<Vec<S>>,
    f_caches: Vec<BlockCache<S>>,
    r_inputs: Vec<Vec<S>>,
    r_caches: Vec<BlockCache<S>>,
}

impl<S: Scalar> Cahi<S> {
    pub fn new<R: Rng + ?Sized>(width: usize, config: &CahiConfig, rng: &mut R) -> Self {
        let n = if config.active() { config.n_layers } else { 0 };
        let to_object = (0..n).map(|_| IntegrationBlock::new(width, config, rng)).collect();
        let to_context = (0..n).map(|_| IntegrationBlock::new(width, config, rng)).collect();
        Self {
            config: config.clone(),
            to_object,
            to_context,
        }
    }

    /// `tokens` are `[B·L × m]` per view; returns refined tokens in the same
    /// layout. The contour tokens pass through unchanged.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tokens: &[Vec<S>; 3],
        batch: usize,
        mode: Mode,
        rng: &mut R,
    ) -> Result<([Vec<S>; 3], CahiCache<S>)> {
        let mut cache = CahiCache {
            f_inputs: Vec::new(),
            f_caches: Vec::new(),
            r_inputs: Vec::new(),
            r_caches: Vec::new(),
        };
        let mut f = tokens[1].clone();
        for blk in &self.to_object {
            let (y, c) = blk.forward(&tokens[0], &f, batch, mode, rng)?;
            cache.f_inputs.push(std::mem::replace(&mut f, y));
            cache.f_caches.push(c);
        }
        let mut r = tokens[2].clone();
        for blk in &self.to_context {
            let (y, c) = blk.forward(&f, &r, batch, mode, rng)?;
            cache.r_inputs.push(std::mem::replace(&mut r, y));
            cache.r_caches.push(c);
        }
        Ok(([tokens[0].clone(), f, r], cache))
    }

    /// Given gradients on the three outputs, accumulates parameter
    /// gradients and returns gradients on the three inputs.
    pub fn backward(&mut self, tokens: &[Vec<S>; 3], out: &[Vec<S>; 3], cache: &CahiCache<S>, dout: [Vec<S>; 3]) -> [Vec<S>; 3] {
        let [mut db, mut df, mut dr] = dout;
        let f_final = &out[1];
        for (l, blk) in self.to_context.iter_mut().enumerate().rev() {
            let (da, dbi) = blk.backward(f_final, &cache.r_inputs[l], &cache.r_caches[l], &dr);
            for (g, v) in df.iter_mut().zip(da) {
                *g += v;
            }
            dr = dbi;
        }
        for (l, blk) in self.to_object.iter_mut().enumerate().rev() {
            let (da, dbi) = blk.backward(&tokens[0], &cache.f_inputs[l], &cache.f_caches[l], &df);
            for (g, v) in db.iter_mut().zip(da) {
                *g += v;
            }
            df = dbi;
        }
        [db, df, dr]
    }
}

impl<S: Scalar> Parameterized<S> for Cahi<S> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<S>)) {
        for (l, b) in self.to_object.iter().enumerate() {
            b.visit_params(&join(prefix, &format!("to_object.{l}")), f);
        }
        for (l, b) in self.to_context.iter().enumerate() {
            b.visit_params(&join(prefix, &format!("to_context.{l}")), f);
        }
    }
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        for (l, b) in self.to_object.iter_mut().enumerate() {
            b.visit_params_mut(&join(prefix, &format!("to_object.{l}")), f);
        }
        for (l, b) in self.to_context.iter_mut().enumerate() {
            b.visit_params_mut(&join(prefix, &format!("to_context.{l}")), f);
        }
    }
}

/// Row-major flatten of one sample's tokens followed by `head`.
pub fn flatten_project<S: Scalar>(tokens: &TokenSequence<S>, head: &Linear<S>) -> Result<Vec<S>> {
    if tokens.len * tokens.width != head.input_dim() {
        return Err(Error::Shape(format!(
            "flatten_project: {}×{} tokens do not match projection input {}",
            tokens.len,
            tokens.width,
            head.input_dim()
        )));
    }
    Ok(head.forward(&tokens.data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn layer(m: usize, h: usize, dk: usize, kv: KvSource, seed: u64) -> MultiHeadCrossAttention<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut l = MultiHeadCrossAttention::new(m, h, dk, kv, &mut rng);
        l.bo.value = rand_vec(m, &mut rng);
        l
    }

    /// Loop-only attention for one sample.
    fn brute(l: &MultiHeadCrossAttention<f64>, a: &[f64], b: &[f64], la: usize, lb: usize) -> Vec<f64> {
        let (m, h, dk) = (l.width(), l.heads, l.head_dim);
        let w = |p: &Param<f64>, i: usize, r: usize, c: usize| p.value[(i * m + r) * dk + c];
        let vsrc = if l.kv_source == KvSource::Lower { a } else { b };
        let mut concat = vec![0.0; lb * h * dk];
        for i in 0..h {
            for t in 0..lb {
                let mut q = vec![0.0; dk];
                for c in 0..dk {
                    for r in 0..m {
                        q[c] += b[t * m + r] * w(&l.wq, i, r, c);
                    }
                }
                let mut scores = vec![0.0; la];
                for (s, score) in scores.iter_mut().enumerate() {
                    for c in 0..dk {
                        let mut kc = 0.0;
                        for r in 0..m {
                            kc += a[s * m + r] * w(&l.wk, i, r, c);
                        }
                        *score += q[c] * kc;
                    }
                    *score /= (dk as f64).sqrt();
                }
                let z: f64 = scores.iter().map(|x| x.exp()).sum();
                for (s, score) in scores.iter().enumerate() {
                    let p = score.exp() / z;
                    for c in 0..dk {
                        let mut vc = 0.0;
                        for r in 0..m {
                            vc += vsrc[s * m + r] * w(&l.wv, i, r, c);
                        }
                        concat[t * h * dk + i * dk + c] += p * vc;
                    }
                }
            }
        }
        let mut out = vec![0.0; lb * m];
        for t in 0..lb {
            for o in 0..m {
                out[t * m + o] = l.bo.value[o];
                for j in 0..h * dk {
                    out[t * m + o] += concat[t * h * dk + j] * l.wo.value[j * m + o];
                }
            }
        }
        out
    }

    #[test]
    fn matches_brute_force_on_toy_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for kv in [KvSource::Lower, KvSource::ValueFromQuery] {
            for la in 1..=3 {
                for lb in 1..=3 {
                    if kv == KvSource::ValueFromQuery && la != lb {
                        continue;
                    }
                    for h in 1..=2 {
                        for m in [2, 5, 8] {
                            let dk = (m / h).max(1);
                            let l = layer(m, h, dk, kv, rng.random());
                            let a = rand_vec(2 * la * m, &mut rng);
                            let b = rand_vec(2 * lb * m, &mut rng);
                            let (out, _) = l.forward(&a, &b, 2).unwrap();
                            for s in 0..2 {
                                let want = brute(&l, &a[s * la * m..(s + 1) * la * m], &b[s * lb * m..(s + 1) * lb * m], la, lb);
                                let got = &out[s * lb * m..(s + 1) * lb * m];
                                for (x, y) in got.iter().zip(&want) {
                                    assert!((x - y).abs() <= 1e-12);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn single_token_output_is_value_through_wo() {
        let l = layer(4, 1, 4, KvSource::Lower, 1);
        let a = vec![0.3, -0.2, 0.9, 0.1];
        let b = vec![-1.0, 0.5, 0.2, 0.7];
        let (out, cache) = l.forward(&a, &b, 1).unwrap();
        assert_eq!(cache.weights(0, 0), &[1.0]);
        let mut v = vec![0.0; 4];
        gemm_nn(&a, &l.wv.value, &mut v, 1, 4, 4, false);
        for o in 0..4 {
            let want: f64 = l.bo.value[o] + (0..4).map(|j| v[j] * l.wo.value[j * 4 + o]).sum::<f64>();
            assert!((out[o] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_keys_give_uniform_weights() {
        let l = layer(4, 2, 2, KvSource::Lower, 2);
        let tok = [0.4, -0.1, 0.3, 0.8];
        let a: Vec<f64> = tok.iter().cycle().take(12).copied().collect();
        let b = vec![0.1, 0.2, -0.3, 0.5, 1.0, -1.0, 0.0, 0.2];
        let (_, cache) = l.forward(&a, &b, 1).unwrap();
        for h in 0..2 {
            for &p in cache.weights(h, 0) {
                assert!((p - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn rows_sum_to_one_and_key_permutation_invariant(seed in 0u64..1000, la in 1usize..5, lb in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = 6;
            let l = layer(m, 3, 2, KvSource::Lower, seed);
            let a = rand_vec(la * m, &mut rng);
            let b = rand_vec(lb * m, &mut rng);
            let (out, cache) = l.forward(&a, &b, 1).unwrap();
            for h in 0..3 {
                for row in cache.weights(h, 0).chunks(la) {
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
                }
            }
            let mut perm: Vec<usize> = (0..la).collect();
            perm.rotate_left(seed as usize % la);
            let ap: Vec<f64> = perm.iter().flat_map(|&i| a[i * m..(i + 1) * m].to_vec()).collect();
            let (outp, _) = l.forward(&ap, &b, 1).unwrap();
            for (x, y) in out.iter().zip(&outp) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn zero_output_projection_reduces_to_layernorm() {
        let cfg = CahiConfig { dropout: 0.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cahi = Cahi::<f64>::new(6, &cfg, &mut rng);
        for blk in cahi.to_object.iter_mut().chain(cahi.to_context.iter_mut()) {
            blk.attn.wo.value.fill(0.0);
        }
        let toks = [rand_vec(18, &mut rng), rand_vec(18, &mut rng), rand_vec(18, &mut rng)];
        let (out, _) = cahi.forward(&toks, 1, Mode::Eval, &mut rng).unwrap();
        let ln = LayerNorm::<f64>::new(6, LN_EPS);
        assert_eq!(out[0], toks[0]);
        assert_eq!(out[1], ln.forward(&toks[1]).0);
        assert_eq!(out[2], ln.forward(&toks[2]).0);
    }

    #[test]
    fn disabled_is_identity_and_contour_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let toks = [rand_vec(12, &mut rng), rand_vec(12, &mut rng), rand_vec(12, &mut rng)];
        let off = Cahi::<f64>::new(4, &CahiConfig { enabled: false, ..Default::default() }, &mut rng);
        assert_eq!(off.num_parameters(), 0);
        let (out, _) = off.forward(&toks, 1, Mode::Train, &mut rng).unwrap();
        assert_eq!(out, toks);

        let on = Cahi::<f64>::new(4, &CahiConfig::default(), &mut rng);
        let (out, _) = on.forward(&toks, 1, Mode::Eval, &mut rng).unwrap();
        assert_eq!(out[0], toks[0]);
        let mut other = on.clone();
        other.to_context[0].attn.wq.value[0] += 1.0;
        let (out2, _) = other.forward(&toks, 1, Mode::Eval, &mut rng).unwrap();
        assert_eq!(out2[1], out[1]);
        assert_ne!(out2[2], out[2]);
    }

    #[test]
    fn width_mismatch_is_reported() {
        let l = layer(4, 1, 2, KvSource::Lower, 0);
        let a = TokenSequence { len: 1, width: 3, data: vec![0.0; 3] };
        let b = TokenSequence { len: 1, width: 4, data: vec![0.0; 4] };
        assert!(matches!(l.apply(&a, &b), Err(Error::Shape(_))));
    }

    /// Central-difference check of every parameter and both inputs of a
    /// two-layer stack, in f64.
    #[test]
    fn backward_matches_finite_differences() {
        for kv in [KvSource::Lower, KvSource::ValueFromQuery] {
            let cfg = CahiConfig {
                n_layers: 2,
                heads: 2,
                head_dim: Some(3),
                kv_source: kv,
                dropout: 0.3,
                ..Default::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let mut cahi = Cahi::<f64>::new(5, &cfg, &mut rng);
            for blk in cahi.to_object.iter_mut().chain(cahi.to_context.iter_mut()) {
                blk.norm.gamma.value = rand_vec(5, &mut rng);
                blk.attn.bo.value = rand_vec(5, &mut rng);
            }
            let toks = [rand_vec(30, &mut rng), rand_vec(30, &mut rng), rand_vec(30, &mut rng)];
            let w: Vec<Vec<f64>> = (0..3).map(|_| rand_vec(30, &mut rng)).collect();
            let loss = |c: &Cahi<f64>, t: &[Vec<f64>; 3]| -> f64 {
                let mut r = ChaCha8Rng::seed_from_u64(77);
                let (o, _) = c.forward(t, 2, Mode::Train, &mut r).unwrap();
                (0..3).map(|v| o[v].iter().zip(&w[v]).map(|(x, y)| x * y).sum::<f64>()).sum()
            };
            let mut r = ChaCha8Rng::seed_from_u64(77);
            let (out, cache) = cahi.forward(&toks, 2, Mode::Train, &mut r).unwrap();
            let mut g = cahi.clone();
            g.zero_grad();
            let dtoks = g.backward(&toks, &out, &cache, [w[0].clone(), w[1].clone(), w[2].clone()]);
            let eps = 1e-6;
            for name in cahi.param_names() {
                let n = cahi.clone().with_param_mut(&name, |p| p.numel()).unwrap();
                let analytic = g.clone().with_param_mut(&name, |p| p.grad.clone()).unwrap();
                for i in 0..n {
                    let mut plus = cahi.clone();
                    plus.with_param_mut(&name, |p| p.value[i] += eps);
                    let mut minus = cahi.clone();
                    minus.with_param_mut(&name, |p| p.value[i] -= eps);
                    let num = (loss(&plus, &toks) - loss(&minus, &toks)) / (2.0 * eps);
                    assert!((num - analytic[i]).abs() < 1e-6, "{kv:?} {name}[{i}]: {num} vs {}", analytic[i]);
                }
            }
            for v in 0..3 {
                for i in 0..30 {
                    let mut tp = toks.clone();
                    tp[v][i] += eps;
                    let mut tm = toks.clone();
                    tm[v][i] -= eps;
                    let num = (loss(&cahi, &tp) - loss(&cahi, &tm)) / (2.0 * eps);
                    assert!((num - dtoks[v][i]).abs() < 1e-6, "{kv:?} input {v}[{i}]");
                }
            }
        }
    }

    #[test]
    fn flatten_project_identity_and_gradient() {
        let toks = TokenSequence { len: 2, width: 3, data: vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.5] };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut id = Linear::<f64>::new(6, 6, &mut rng);
        id.weight.value = (0..36).map(|i| if i % 7 == 0 { 1.0 } else { 0.0 }).collect();
        id.bias.value.fill(0.0);
        assert_eq!(flatten_project(&toks, &id).unwrap(), toks.data);
        let zero = TokenSequence { len: 2, width: 3, data: vec![0.0; 6] };
        assert!(flatten_project(&zero, &id).unwrap().iter().all(|&v| v == 0.0));

        let head = Linear::<f64>::new(6, 4, &mut rng);
        let w = rand_vec(4, &mut rng);
        let loss = |h: &Linear<f64>| flatten_project(&toks, h).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let mut g = head.clone();
        g.backward(&toks.data, &w);
        for i in 0..24 {
            let mut p = head.clone();
            p.weight.value[i] += 1e-6;
            let mut m = head.clone();
            m.weight.value[i] -= 1e-6;
            let num = (loss(&p) - loss(&m)) / 2e-6;
            assert!((num - g.weight.grad[i]).abs() <= 1e-3 * num.abs().max(1e-6));
        }
    }
}
