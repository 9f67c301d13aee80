use serde::{Deserialize, Serialize};

use crate::nn::Parameterized;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected adaptive-moment optimizer. Moment buffers follow the
/// model's parameter visiting order.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub lr: f64,
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: f64, config: AdamConfig) -> Self {
        Self {
            lr,
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step<M: Parameterized<S> + ?Sized>(&mut self, model: &mut M) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.config.beta1, self.config.beta2);
        let c1 = S::lit(1.0 - b1.powi(t));
        let c2 = S::lit(1.0 - b2.powi(t));
        let (b1, b2, eps, lr) = (S::lit(b1), S::lit(b2), S::lit(self.config.eps), S::lit(self.lr));
        let one = S::one();
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut idx = 0;
        model.visit_params_mut("", &mut |_, p| {
            if ms.len() <= idx {
                ms.push(vec![S::zero(); p.numel()]);
                vs.push(vec![S::zero(); p.numel()]);
            }
            let (m, v) = (&mut ms[idx], &mut vs[idx]);
            for i in 0..p.numel() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p.value[i] -= lr * mh / (vh.sqrt() + eps);
            }
            idx += 1;
        });
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<S: Scalar, M: Parameterized<S> + ?Sized>(model: &mut M, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    model.visit_params("", &mut |_, p| {
        sq += p.grad.iter().map(|g| g.to_f64_lossy().powi(2)).sum::<f64>();
    });
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = S::lit(max_norm / norm);
        model.visit_params_mut("", &mut |_, p| p.grad.iter_mut().for_each(|g| *g *= s));
    }
    norm
}
