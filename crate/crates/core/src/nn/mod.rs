//! Parameter containers and the differentiable building blocks shared by
//! the encoder and the integration module. Every layer exposes an explicit
//! forward returning a cache and a backward consuming it.

pub mod layers;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

pub use layers::{elu, elu_backward_from_output, BatchNorm, BnCache, DropoutMask, LayerNorm, LnCache, Linear};

use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Learnable tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<S> {
    pub shape: Vec<usize>,
    pub value: Vec<S>,
    pub grad: Vec<S>,
}

impl<S: Scalar> Param<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            value: vec![S::zero(); n],
            grad: vec![S::zero(); n],
        }
    }

    pub fn filled(shape: &[usize], v: S) -> Self {
        let mut p = Self::zeros(shape);
        p.value.fill(v);
        p
    }

    /// `U(-bound, bound)` entries.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        if bound > 0.0 {
            let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
            p.value.iter_mut().for_each(|v| *v = S::lit(dist.sample(rng)));
        }
        p
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(S::zero());
    }
}

/// Uniform enumeration of learnable tensors (name, tensor) in a fixed order,
/// plus non-learnable buffers (batch-norm running statistics).
pub trait Parameterized<S: Scalar> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<S>));
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>));

    fn visit_buffers(&self, _prefix: &str, _f: &mut dyn FnMut(&str, &[S])) {}
    fn visit_buffers_mut(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Vec<S>)) {}

    fn zero_grad(&mut self) {
        self.visit_params_mut("", &mut |_, p| p.zero_grad());
    }

    fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit_params("", &mut |n, _| out.push(n.to_string()));
        out
    }

    fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, p| n += p.numel());
        n
    }

    /// Applies `f` to the named tensor; `None` if no tensor has that name.
    fn with_param_mut<R>(&mut self, name: &str, f: impl FnOnce(&mut Param<S>) -> R) -> Option<R>
    where
        Self: Sized,
    {
        let mut f = Some(f);
        let mut out = None;
        self.visit_params_mut("", &mut |n, p| {
            if n == name {
                if let Some(f) = f.take() {
                    out = Some(f(p));
                }
            }
        });
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
