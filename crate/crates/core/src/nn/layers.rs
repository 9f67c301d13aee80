use rand::Rng;

use super::{join, Param, Parameterized};
use crate::linalg::{gemm_nn, gemm_nt, gemm_tn};
use crate::Scalar;

#[inline]
pub fn elu<S: Scalar>(x: S, alpha: S) -> S {
    if x > S::zero() {
        x
    } else {
        alpha * (x.exp() - S::one())
    }
}

/// ELU derivative expressed through the output: `1` where `h > 0`,
/// `h + alpha` elsewhere.
#[inline]
pub fn elu_backward_from_output<S: Scalar>(h: S, dh: S, alpha: S) -> S {
    if h > S::zero() {
        dh
    } else {
        dh * (h + alpha)
    }
}

/// Inverted-dropout multipliers (`0` or `1/(1-p)`).
#[derive(Debug, Clone)]
pub struct DropoutMask<S>(pub Vec<S>);

impl<S: Scalar> DropoutMask<S> {
    pub fn sample<R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Self {
        let keep = S::lit(1.0 / (1.0 - p));
        Self((0..len).map(|_| if rng.random::<f64>() < p { S::zero() } else { keep }).collect())
    }

    pub fn apply(&self, x: &mut [S]) {
        for (v, m) in x.iter_mut().zip(&self.0) {
            *v *= *m;
        }
    }
}

/// Batch normalization over a `[outer, channels, inner]` view; statistics
/// per channel across `outer × inner`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<S> {
    pub gamma: Param<S>,
    pub beta: Param<S>,
    pub running_mean: Vec<S>,
    pub running_var: Vec<S>,
    pub eps: S,
    pub momentum: S,
}

#[derive(Debug, Clone)]
pub struct BnCache<S> {
    pub xhat: Vec<S>,
    pub inv_std: Vec<S>,
    pub batch_mean: Vec<S>,
    pub batch_var: Vec<S>,
    pub count: usize,
    pub train: bool,
}

impl<S: Scalar> BatchNorm<S> {
    pub fn new(channels: usize, eps: f64, momentum: f64) -> Self {
        Self {
            gamma: Param::filled(&[channels], S::one()),
            beta: Param::zeros(&[channels]),
            running_mean: vec![S::zero(); channels],
            running_var: vec![S::one(); channels],
            eps: S::lit(eps),
            momentum: S::lit(momentum),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    pub fn forward(&self, x: &[S], outer: usize, inner: usize, train: bool) -> (Vec<S>, BnCache<S>) {
        let c_n = self.channels();
        debug_assert_eq!(x.len(), outer * c_n * inner);
        let count = outer * inner;
        let (mean, var) = if train {
            let mut mean = vec![S::zero(); c_n];
            let mut var = vec![S::zero(); c_n];
            for o in 0..outer {
                for c in 0..c_n {
                    let s = &x[(o * c_n + c) * inner..(o * c_n + c + 1) * inner];
                    mean[c] += s.iter().copied().sum::<S>();
                }
            }
            let inv_n = S::one() / S::from_usize_lossy(count);
            mean.iter_mut().for_each(|m| *m *= inv_n);
            for o in 0..outer {
                for c in 0..c_n {
                    let s = &x[(o * c_n + c) * inner..(o * c_n + c + 1) * inner];
                    var[c] += s.iter().map(|&v| (v - mean[c]) * (v - mean[c])).sum::<S>();
                }
            }
            var.iter_mut().for_each(|v| *v *= inv_n);
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + self.eps).sqrt()).collect();
        let mut xhat = vec![S::zero(); x.len()];
        let mut y = vec![S::zero(); x.len()];
        for o in 0..outer {
            for c in 0..c_n {
                let base = (o * c_n + c) * inner;
                let (g, b) = (self.gamma.value[c], self.beta.value[c]);
                for i in base..base + inner {
                    let z = (x[i] - mean[c]) * inv_std[c];
                    xhat[i] = z;
                    y[i] = g * z + b;
                }
            }
        }
        (
            y,
            BnCache {
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
                count,
                train,
            },
        )
    }

    /// Folds the batch statistics of a training forward into the running
    /// estimates (unbiased variance, exponential moving average).
    pub fn commit(&mut self, cache: &BnCache<S>) {
        if !cache.train {
            return;
        }
        let m = self.momentum;
        let n = cache.count;
        let unbias = if n > 1 {
            S::from_usize_lossy(n) / S::from_usize_lossy(n - 1)
        } else {
            S::one()
        };
        for c in 0..self.channels() {
            self.running_mean[c] = (S::one() - m) * self.running_mean[c] + m * cache.batch_mean[c];
            self.running_var[c] = (S::one() - m) * self.running_var[c] + m * cache.batch_var[c] * unbias;
        }
    }

    pub fn backward(&mut self, cache: &BnCache<S>, dy: &[S], outer: usize, inner: usize) -> Vec<S> {
        let c_n = self.channels();
        let mut sum_dy = vec![S::zero(); c_n];
        let mut sum_dy_xhat = vec![S::zero(); c_n];
        for o in 0..outer {
            for c in 0..c_n {
                let base = (o * c_n + c) * inner;
                for i in base..base + inner {
                    sum_dy[c] += dy[i];
                    sum_dy_xhat[c] += dy[i] * cache.xhat[i];
                }
            }
        }
        for c in 0..c_n {
            self.gamma.grad[c] += sum_dy_xhat[c];
            self.beta.grad[c] += sum_dy[c];
        }
        let mut dx = vec![S::zero(); dy.len()];
        let n = S::from_usize_lossy(cache.count);
        for o in 0..outer {
            for c in 0..c_n {
                let base = (o * c_n + c) * inner;
                let k = self.gamma.value[c] * cache.inv_std[c];
                if cache.train {
                    let (mdy, mdyx) = (sum_dy[c] / n, sum_dy_xhat[c] / n);
                    for i in base..base + inner {
                        dx[i] = k * (dy[i] - mdy - cache.xhat[i] * mdyx);
                    }
                } else {
                    for i in base..base + inner {
                        dx[i] = k * dy[i];
                    }
                }
            }
        }
        dx
    }
}

impl<S: Scalar> Parameterized<S> for BatchNorm<S> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<S>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &[S])) {
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }
    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Vec<S>)) {
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

/// Layer normalization over the last axis of a `[rows, width]` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<S> {
    pub gamma: Param<S>,
    pub beta: Param<S>,
    pub eps: S,
}

#[derive(Debug, Clone)]
pub struct LnCache<S> {
    pub xhat: Vec<S>,
    pub inv_std: Vec<S>,
}

impl<S: Scalar> LayerNorm<S> {
    pub fn new(width: usize, eps: f64) -> Self {
        Self {
            gamma: Param::filled(&[width], S::one()),
            beta: Param::zeros(&[width]),
            eps: S::lit(eps),
        }
    }

    pub fn forward(&self, x: &[S]) -> (Vec<S>, LnCache<S>) {
        let w = self.gamma.numel();
        let rows = x.len() / w;
        let inv_w = S::one() / S::from_usize_lossy(w);
        let mut y = vec![S::zero(); x.len()];
        let mut xhat = vec![S::zero(); x.len()];
        let mut inv_std = vec![S::zero(); rows];
        for r in 0..rows {
            let row = &x[r * w..(r + 1) * w];
            let mean = row.iter().copied().sum::<S>() * inv_w;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() * inv_w;
            let is = S::one() / (var + self.eps).sqrt();
            inv_std[r] = is;
            for i in 0..w {
                let z = (row[i] - mean) * is;
                xhat[r * w + i] = z;
                y[r * w + i] = self.gamma.value[i] * z + self.beta.value[i];
            }
        }
        (y, LnCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LnCache<S>, dy: &[S]) -> Vec<S> {
        let w = self.gamma.numel();
        let rows = dy.len() / w;
        let inv_w = S::one() / S::from_usize_lossy(w);
        let mut dx = vec![S::zero(); dy.len()];
        for r in 0..rows {
            let (mut s1, mut s2) = (S::zero(), S::zero());
            for i in 0..w {
                let k = r * w + i;
                self.gamma.grad[i] += dy[k] * cache.xhat[k];
                self.beta.grad[i] += dy[k];
                let dz = dy[k] * self.gamma.value[i];
                s1 += dz;
                s2 += dz * cache.xhat[k];
            }
            for i in 0..w {
                let k = r * w + i;
                let dz = dy[k] * self.gamma.value[i];
                dx[k] = cache.inv_std[r] * (dz - s1 * inv_w - cache.xhat[k] * s2 * inv_w);
            }
        }
        dx
    }
}

impl<S: Scalar> Parameterized<S> for LayerNorm<S> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<S>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

/// Affine map `y = W x + b` applied to each row of a `[rows, in]` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<S> {
    pub weight: Param<S>,
    pub bias: Param<S>,
}

impl<S: Scalar> Linear<S> {
    /// PyTorch-style default init: `U(-1/√in, 1/√in)` for weight and bias.
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self {
            weight: Param::uniform(&[output, input], bound, rng),
            bias: Param::uniform(&[output], bound, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&self, x: &[S]) -> Vec<S> {
        let (i, o) = (self.input_dim(), self.output_dim());
        let rows = x.len() / i;
        let mut y = vec![S::zero(); rows * o];
        gemm_nt(x, &self.weight.value, &mut y, rows, i, o, false);
        for r in 0..rows {
            for (yv, b) in y[r * o..(r + 1) * o].iter_mut().zip(&self.bias.value) {
                *yv += *b;
            }
        }
        y
    }

    pub fn backward(&mut self, x: &[S], dy: &[S]) -> Vec<S> {
        let (i, o) = (self.input_dim(), self.output_dim());
        let rows = x.len() / i;
        gemm_tn(dy, x, &mut self.weight.grad, o, rows, i, true);
        for r in 0..rows {
            for (g, d) in self.bias.grad.iter_mut().zip(&dy[r * o..(r + 1) * o]) {
                *g += *d;
            }
        }
        let mut dx = vec![S::zero(); rows * i];
        gemm_nn(dy, &self.weight.value, &mut dx, rows, o, i, false);
        dx
    }
}

impl<S: Scalar> Parameterized<S> for Linear<S> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<S>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central-difference gradient of `f` at `x` (f64 oracle).
    fn numeric(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
        let eps = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += eps;
                xm[i] -= eps;
                (f(&xp) - f(&xm)) / (2.0 * eps)
            })
            .collect()
    }

    fn weights(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn batchnorm_input_gradient() {
        let (outer, c, inner) = (3, 2, 4);
        let x = weights(outer * c * inner, 1);
        let w = weights(x.len(), 2);
        let mut bn = BatchNorm::<f64>::new(c, 1e-5, 0.1);
        bn.gamma.value = vec![1.3, -0.7];
        bn.beta.value = vec![0.2, 0.1];
        let loss = |x: &[f64]| -> f64 {
            let (y, _) = bn.forward(x, outer, inner, true);
            y.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let num = numeric(&loss, &x);
        let (_, cache) = bn.forward(&x, outer, inner, true);
        let mut bn2 = bn.clone();
        let dx = bn2.backward(&cache, &w, outer, inner);
        for (a, b) in dx.iter().zip(&num) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let mut bn = BatchNorm::<f64>::new(1, 0.0, 0.5);
        let x = vec![1.0, 3.0];
        let (_, cache) = bn.forward(&x, 2, 1, true);
        bn.commit(&cache);
        // mean 2, unbiased var 2 → running = 0.5*0 + 0.5*2 = 1, 0.5*1 + 0.5*2 = 1.5
        assert_eq!(bn.running_mean, vec![1.0]);
        assert_eq!(bn.running_var, vec![1.5]);
        let (y, _) = bn.forward(&[1.0], 1, 1, false);
        assert!((y[0] - 0.0).abs() < 1e-12);
    }

    #[test]
    fn layernorm_input_gradient() {
        let x = weights(12, 3);
        let w = weights(12, 4);
        let mut ln = LayerNorm::<f64>::new(4, 1e-5);
        ln.gamma.value = vec![0.5, 1.5, -1.0, 2.0];
        let loss = |x: &[f64]| -> f64 { ln.forward(x).0.iter().zip(&w).map(|(a, b)| a * b).sum() };
        let num = numeric(&loss, &x);
        let (_, cache) = ln.forward(&x);
        let dx = ln.clone().backward(&cache, &w);
        for (a, b) in dx.iter().zip(&num) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn linear_counts_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lin = Linear::<f64>::new(5, 3, &mut rng);
        assert_eq!(lin.num_parameters(), 5 * 3 + 3);
        let x = weights(10, 9);
        let w = weights(6, 8);
        let loss = |x: &[f64]| -> f64 { lin.forward(x).iter().zip(&w).map(|(a, b)| a * b).sum() };
        let num = numeric(&loss, &x);
        let dx = lin.clone().backward(&x, &w);
        for (a, b) in dx.iter().zip(&num) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn elu_derivative_matches() {
        for &x in &[-2.0f64, -0.3, 0.4, 1.7] {
            let h = elu(x, 1.0);
            let d = elu_backward_from_output(h, 1.0, 1.0);
            let num = (elu(x + 1e-6, 1.0) - elu(x - 1e-6, 1.0)) / 2e-6;
            assert!((d - num).abs() < 1e-6);
        }
    }
}
