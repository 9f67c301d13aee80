//! Central-difference verification of analytic gradients.

use serde::Serialize;

use crate::nn::Parameterized;
use crate::{Result, Scalar};

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub numel: usize,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub eps: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max)
    }
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, and `0` when both vanish.
pub fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let diff = a.iter().zip(n).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    let den = na.max(nn);
    if den < 1e-12 {
        0.0
    } else {
        diff / den
    }
}

/// Compares the gradients held in `analytic` with central differences of
/// `loss` around `model`, for every parameter tensor. `loss` must be a
/// deterministic function of the weights (reseed any dropout RNG inside).
pub fn grad_check<S, M>(
    model: &M,
    analytic: &M,
    loss: &mut dyn FnMut(&M) -> Result<f64>,
    eps: f64,
) -> Result<GradCheckReport>
where
    S: Scalar,
    M: Parameterized<S> + Clone,
{
    let mut work = model.clone();
    let mut grads: Vec<(String, Vec<f64>)> = Vec::new();
    analytic.visit_params("", &mut |name, p| {
        grads.push((name.to_string(), p.grad.iter().map(|g| g.to_f64_lossy()).collect()))
    });
    let step = S::lit(eps);
    let mut tensors = Vec::with_capacity(grads.len());
    for (name, g) in grads {
        let mut numeric = Vec::with_capacity(g.len());
        for i in 0..g.len() {
            let orig = work.with_param_mut(&name, |p| p.value[i]).expect("tensor exists");
            work.with_param_mut(&name, |p| p.value[i] = orig + step);
            let lp = loss(&work)?;
            work.with_param_mut(&name, |p| p.value[i] = orig - step);
            let lm = loss(&work)?;
            work.with_param_mut(&name, |p| p.value[i] = orig);
            numeric.push((lp - lm) / (2.0 * eps));
        }
        tensors.push(TensorCheck {
            numel: g.len(),
            analytic_norm: g.iter().map(|x| x * x).sum::<f64>().sqrt(),
            numeric_norm: numeric.iter().map(|x| x * x).sum::<f64>().sqrt(),
            rel_error: relative_error(&g, &numeric),
            name,
        });
    }
    Ok(GradCheckReport { eps, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_least_squares_checks_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lin = Linear::<f64>::new(3, 2, &mut rng);
        let x = [0.5, -1.0, 2.0, 1.5, 0.0, -0.5];
        let mut loss = |l: &Linear<f64>| Ok(l.forward(&x).iter().map(|v| v * v).sum::<f64>() * 0.5);
        let mut g = lin.clone();
        let y = g.forward(&x);
        g.backward(&x, &y);
        let rep = grad_check(&lin, &g, &mut loss, 1e-5).unwrap();
        assert_eq!(rep.tensors.len(), 2);
        assert!(rep.worst() < 1e-8, "{rep:?}");

        g.weight.grad[0] += 1.0;
        let rep = grad_check(&lin, &g, &mut loss, 1e-5).unwrap();
        assert!(rep.worst() > 1e-2);
    }

    #[test]
    fn relative_error_edge_cases() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((relative_error(&[1.0, 0.0], &[0.0, 0.0]) - 1.0).abs() < 1e-15);
    }
}
