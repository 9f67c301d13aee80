//! Contrastive alignment of concatenated EEG features with concatenated
//! image embeddings.

use serde::{Deserialize, Serialize};

use crate::decomposition::View;
use crate::linalg::{dot, gemm_nn, gemm_nt, gemm_tn, l2_norm};
use crate::{Error, Result, Scalar};

/// Initial `logit_scale`, `ln(1/0.07)`.
pub fn default_logit_scale() -> f64 {
    (1.0f64 / 0.07).ln()
}

/// Upper bound on `α = exp(logit_scale)`.
pub const MAX_LOGIT_SCALE_EXP: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Row-wise cross-entropy (EEG query against image candidates).
    #[default]
    EegToImg,
    /// Mean of row-wise and column-wise cross-entropy.
    Symmetric,
}

/// Nonempty subset of views, kept in b, f, r order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<View>", into = "Vec<View>")]
pub struct ViewSet([bool; 3]);

impl ViewSet {
    pub const TRIPLE: ViewSet = ViewSet([true; 3]);

    pub fn new(views: &[View]) -> Result<Self> {
        let mut m = [false; 3];
        for v in views {
            m[v.index()] = true;
        }
        if !m.iter().any(|&x| x) {
            return Err(Error::InvalidArgument("view subset must not be empty".into()));
        }
        Ok(Self(m))
    }

    pub fn contains(&self, v: View) -> bool {
        self.0[v.index()]
    }

    pub fn views(&self) -> Vec<View> {
        View::ALL.into_iter().filter(|v| self.contains(*v)).collect()
    }

    pub fn len(&self) -> usize {
        self.0.iter().filter(|&&x| x).count()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// All seven nonempty subsets: singles, pairs, then the triple.
    pub fn all_subsets() -> Vec<ViewSet> {
        use View::*;
        [
            vec![Contour],
            vec![Object],
            vec![Context],
            vec![Contour, Object],
            vec![Contour, Context],
            vec![Object, Context],
            vec![Contour, Object, Context],
        ]
        .iter()
        .map(|v| ViewSet::new(v).expect("nonempty"))
        .collect()
    }

    /// Label such as `BOM+FO`, or `Triple` for all three.
    pub fn label(&self) -> String {
        if *self == Self::TRIPLE {
            return "Triple".into();
        }
        self.views().iter().map(|v| v.short()).collect::<Vec<_>>().join("+")
    }
}

impl Default for ViewSet {
    fn default() -> Self {
        Self::TRIPLE
    }
}

impl TryFrom<Vec<View>> for ViewSet {
    type Error = Error;
    fn try_from(v: Vec<View>) -> Result<Self> {
        Self::new(&v)
    }
}

impl From<ViewSet> for Vec<View> {
    fn from(v: ViewSet) -> Self {
        v.views()
    }
}

impl std::fmt::Display for ViewSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

/// `b ‖ f ‖ r`.
pub fn concat_features<S: Scalar>(b: &[S], f: &[S], r: &[S]) -> Vec<S> {
    let mut out = Vec::with_capacity(b.len() + f.len() + r.len());
    out.extend_from_slice(b);
    out.extend_from_slice(f);
    out.extend_from_slice(r);
    out
}

/// Keeps the segments of `views` from `[rows × 3d]` rows.
pub fn select_views<S: Scalar>(x: &[S], rows: usize, d: usize, views: ViewSet) -> Vec<S> {
    let mut out = Vec::with_capacity(rows * views.len() * d);
    for r in 0..rows {
        for v in views.views() {
            let o = r * 3 * d + v.index() * d;
            out.extend_from_slice(&x[o..o + d]);
        }
    }
    out
}

/// Scatters gradients of selected segments back into `[rows × 3d]`.
pub fn scatter_views<S: Scalar>(g: &[S], rows: usize, d: usize, views: ViewSet) -> Vec<S> {
    let mut out = vec![S::zero(); rows * 3 * d];
    let k = views.len();
    for r in 0..rows {
        for (s, v) in views.views().into_iter().enumerate() {
            let o = r * 3 * d + v.index() * d;
            out[o..o + d].copy_from_slice(&g[(r * k + s) * d..(r * k + s + 1) * d]);
        }
    }
    out
}

fn unit_rows<S: Scalar>(x: &[S], rows: usize, k: usize, matrix: &'static str) -> Result<(Vec<S>, Vec<S>)> {
    let mut out = x.to_vec();
    let mut norms = Vec::with_capacity(rows);
    for (r, row) in out.chunks_mut(k).enumerate() {
        let n = l2_norm(row);
        if !(n > S::zero()) || !n.is_finite() {
            return Err(Error::ZeroNorm { matrix, row: r });
        }
        row.iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((out, norms))
}

/// `[N × M]` cosine similarities between the rows of `a` (`N × k`) and `b`
/// (`M × k`).
pub fn cosine_matrix<S: Scalar>(a: &[S], b: &[S], k: usize) -> Result<Vec<S>> {
    let (n, m) = (a.len() / k, b.len() / k);
    let (ua, _) = unit_rows(a, n, k, "A")?;
    let (ub, _) = unit_rows(b, m, k, "B")?;
    let mut out = vec![S::zero(); n * m];
    gemm_nt(&ua, &ub, &mut out, n, k, m, false);
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct InfoNceOutput<S> {
    pub loss: S,
    /// `∂loss/∂F_eeg`, `[N × k]`
    pub grad_eeg: Vec<S>,
    /// `∂loss/∂C_img`, `[N × k]`
    pub grad_img: Vec<S>,
    pub grad_logit_scale: S,
}

/// Mean cross-entropy of row-wise softmax over `logits` (`n × n`) against
/// the diagonal; writes `(softmax − I)/n` into `g`.
fn row_ce<S: Scalar>(logits: &[S], n: usize, g: &mut [S]) -> S {
    let inv_n = S::one() / S::from_usize_lossy(n);
    let mut loss = S::zero();
    for i in 0..n {
        let row = &logits[i * n..(i + 1) * n];
        let mx = row.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
        let z: S = row.iter().map(|&x| (x - mx).exp()).sum();
        loss += z.ln() + mx - row[i];
        for j in 0..n {
            g[i * n + j] = ((row[j] - mx).exp() / z - if i == j { S::one() } else { S::zero() }) * inv_n;
        }
    }
    loss * inv_n
}

/// InfoNCE over `α · cos(F_eeg, C_img)` with labels `0..N`, `α =
/// exp(logit_scale)`. Rows are `k` wide; gradients are analytic.
pub fn infonce_loss<S: Scalar>(
    f_eeg: &[S],
    c_img: &[S],
    k: usize,
    logit_scale: S,
    direction: Direction,
) -> Result<InfoNceOutput<S>> {
    let n = f_eeg.len() / k;
    if n < 2 || c_img.len() != f_eeg.len() || !f_eeg.len().is_multiple_of(k) {
        return Err(Error::Shape(format!(
            "contrastive batch needs N ≥ 2 paired rows of width {k}, got {} and {} values",
            f_eeg.len(),
            c_img.len()
        )));
    }
    let alpha = logit_scale.exp();
    let (ua, na) = unit_rows(f_eeg, n, k, "F_eeg")?;
    let (ub, nb) = unit_rows(c_img, n, k, "C_img")?;
    let mut cos = vec![S::zero(); n * n];
    gemm_nt(&ua, &ub, &mut cos, n, k, n, false);
    let logits: Vec<S> = cos.iter().map(|&c| alpha * c).collect();
    if !alpha.is_finite() || logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLogits(format!(
            "alpha = exp({logit_scale}) overflows; clamp logit_scale so alpha stays at most {MAX_LOGIT_SCALE_EXP}"
        )));
    }

    // g = ∂loss/∂logits
    let mut g = vec![S::zero(); n * n];
    let loss = match direction {
        Direction::EegToImg => row_ce(&logits, n, &mut g),
        Direction::Symmetric => {
            let half = S::lit(0.5);
            let lr = row_ce(&logits, n, &mut g);
            let mut lt = vec![S::zero(); n * n];
            for i in 0..n {
                for j in 0..n {
                    lt[j * n + i] = logits[i * n + j];
                }
            }
            let mut gt = vec![S::zero(); n * n];
            let lc = row_ce(&lt, n, &mut gt);
            for i in 0..n {
                for j in 0..n {
                    g[i * n + j] = half * (g[i * n + j] + gt[j * n + i]);
                }
            }
            half * (lr + lc)
        }
    };

    let grad_logit_scale = alpha * g.iter().zip(&cos).map(|(&a, &b)| a * b).sum::<S>();
    let dcos: Vec<S> = g.iter().map(|&v| v * alpha).collect();
    let mut dua = vec![S::zero(); n * k];
    gemm_nn(&dcos, &ub, &mut dua, n, n, k, false);
    let mut dub = vec![S::zero(); n * k];
    gemm_tn(&dcos, &ua, &mut dub, n, n, k, false);
    let through_norm = |du: &mut [S], u: &[S], norms: &[S]| {
        for r in 0..n {
            let (d, u) = (&mut du[r * k..(r + 1) * k], &u[r * k..(r + 1) * k]);
            let p = dot(d, u);
            for (x, &y) in d.iter_mut().zip(u) {
                *x = (*x - p * y) / norms[r];
            }
        }
    };
    through_norm(&mut dua, &ua, &na);
    through_norm(&mut dub, &ub, &nb);
    Ok(InfoNceOutput {
        loss,
        grad_eeg: dua,
        grad_img: dub,
        grad_logit_scale,
    })
}
