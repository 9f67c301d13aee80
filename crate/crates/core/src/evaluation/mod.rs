//! Zero-shot retrieval metrics, per-view retrieval, representational
//! similarity, reports, and parameter/FLOP accounting.

pub mod accounting;
pub mod report;
pub mod rsm;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use accounting::{count_parameters, estimate_flops, FlopReport, ParameterReport, REFERENCE_FLOPS, REFERENCE_PARAMETERS};
pub use report::{AblationRow, AblationTable, Protocol, RetrievalReport, SubjectResult, ViewSummary};
pub use rsm::{compute_rsm, RsMatrix};

use crate::decomposition::View;
use crate::objective::{cosine_matrix, select_views, ViewSet};
use crate::{Error, Result, Scalar};

/// The k values reported everywhere.
pub const REPORT_KS: [usize; 3] = [1, 3, 5];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TopK {
    pub top1: f64,
    pub top3: f64,
    pub top5: f64,
}

impl TopK {
    pub fn from_map(m: &BTreeMap<usize, f64>) -> Self {
        Self {
            top1: m.get(&1).copied().unwrap_or(f64::NAN),
            top3: m.get(&3).copied().unwrap_or(f64::NAN),
            top5: m.get(&5).copied().unwrap_or(f64::NAN),
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.top1, self.top3, self.top5]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self {
            top1: a[0],
            top3: a[1],
            top5: a[2],
        }
    }

    /// Elementwise mean and sample standard deviation (0 for one run).
    pub fn mean_std(runs: &[TopK]) -> (TopK, TopK) {
        let n = runs.len() as f64;
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        for r in runs {
            for (m, v) in mean.iter_mut().zip(r.as_array()) {
                *m += v / n;
            }
        }
        if runs.len() > 1 {
            for r in runs {
                for ((s, v), m) in std.iter_mut().zip(r.as_array()).zip(mean) {
                    *s += (v - m) * (v - m) / (n - 1.0);
                }
            }
            std.iter_mut().for_each(|s| *s = s.sqrt());
        }
        (TopK::from_array(mean), TopK::from_array(std))
    }
}

/// Gallery indices ordered by descending score; ties go to the lower index.
pub fn rank_gallery<S: Scalar>(scores: &[S]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    idx
}

/// 0-based rank of `truth` under [`rank_gallery`]'s ordering.
fn rank_of<S: Scalar>(scores: &[S], truth: usize) -> usize {
    let st = scores[truth];
    scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > st || (s == st && j < truth))
        .count()
}

/// Fraction of queries whose true gallery item ranks within the top `k` by
/// cosine similarity, for each `k` in `ks`.
pub fn topk_accuracy<S: Scalar>(
    queries: &[S],
    gallery: &[S],
    width: usize,
    truth: &[usize],
    ks: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    let (m, g) = (queries.len() / width, gallery.len() / width);
    if truth.len() != m {
        return Err(Error::Shape(format!("{} truth labels for {m} queries", truth.len())));
    }
    if let Some(&bad) = truth.iter().find(|&&t| t >= g) {
        return Err(Error::InvalidArgument(format!("truth index {bad} outside gallery of {g}")));
    }
    let sims = cosine_matrix(queries, gallery, width)?;
    let ranks: Vec<usize> = (0..m).map(|i| rank_of(&sims[i * g..(i + 1) * g], truth[i])).collect();
    Ok(ks
        .iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|&&r| r < k).count();
            (k, hits as f64 / m.max(1) as f64)
        })
        .collect())
}

/// Top-N gallery ids for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedQuery {
    pub query: usize,
    pub truth: usize,
    pub ranked: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalLists {
    pub views: String,
    pub accuracy: TopK,
    pub queries: Vec<RankedQuery>,
}

/// Retrieval using only the `views` segments of `[M × 3d]` features against
/// the same segments of a `[G × 3d]` gallery; keeps the top `top_n` ids.
pub fn per_view_retrieval<S: Scalar>(
    features: &[S],
    gallery: &[S],
    d: usize,
    views: ViewSet,
    truth: &[usize],
    top_n: usize,
) -> Result<RetrievalLists> {
    let (m, g) = (features.len() / (3 * d), gallery.len() / (3 * d));
    let f = select_views(features, m, d, views);
    let c = select_views(gallery, g, d, views);
    let w = views.len() * d;
    let acc = topk_accuracy(&f, &c, w, truth, &REPORT_KS)?;
    let sims = cosine_matrix(&f, &c, w)?;
    let queries = (0..m)
        .map(|i| RankedQuery {
            query: i,
            truth: truth[i],
            ranked: rank_gallery(&sims[i * g..(i + 1) * g]).into_iter().take(top_n).collect(),
        })
        .collect();
    Ok(RetrievalLists {
        views: views.label(),
        accuracy: TopK::from_map(&acc),
        queries,
    })
}

/// Accuracy for BOM, FO, RS and Triple, keyed by label.
pub fn view_accuracies<S: Scalar>(features: &[S], gallery: &[S], d: usize, truth: &[usize]) -> Result<BTreeMap<String, TopK>> {
    let mut out = BTreeMap::new();
    let sets = View::ALL
        .iter()
        .map(|&v| ViewSet::new(&[v]).expect("nonempty"))
        .chain([ViewSet::TRIPLE]);
    for vs in sets {
        let r = per_view_retrieval(features, gallery, d, vs, truth, 0)?;
        out.insert(r.views, r.accuracy);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Sorts every gallery item explicitly and reads off the truth position.
    fn oracle(q: &[f64], g: &[f64], w: usize, truth: &[usize], k: usize) -> f64 {
        let (m, n) = (q.len() / w, g.len() / w);
        let mut hits = 0;
        for i in 0..m {
            let qi = &q[i * w..(i + 1) * w];
            let nq = qi.iter().map(|x| x * x).sum::<f64>().sqrt();
            let mut scored: Vec<(f64, usize)> = (0..n)
                .map(|j| {
                    let gj = &g[j * w..(j + 1) * w];
                    let ng = gj.iter().map(|x| x * x).sum::<f64>().sqrt();
                    (qi.iter().zip(gj).map(|(a, b)| a * b).sum::<f64>() / (nq * ng), j)
                })
                .collect();
            scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            if scored.iter().take(k).any(|&(_, j)| j == truth[i]) {
                hits += 1;
            }
        }
        hits as f64 / m as f64
    }

    #[test]
    fn perfect_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g: Vec<f64> = (0..200 * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let truth: Vec<usize> = (0..200).collect();
        let acc = topk_accuracy(&g, &g, 8, &truth, &[1]).unwrap();
        assert_eq!(acc[&1], 1.0);
    }

    #[test]
    fn ties_break_by_gallery_index() {
        let q = [1.0, 0.0];
        let g = [0.0, 1.0, 1.0, 0.0, 2.0, 0.0];
        assert_eq!(rank_gallery(&cosine_matrix(&q, &g, 2).unwrap()), vec![1, 2, 0]);
        let acc = topk_accuracy(&q, &g, 2, &[2], &[1, 2]).unwrap();
        assert_eq!((acc[&1], acc[&2]), (0.0, 1.0));
    }

    #[test]
    fn six_item_gallery_matches_exhaustive_ranking() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let g: Vec<f64> = (0..6 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let q: Vec<f64> = (0..4 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let truth: Vec<usize> = (0..4).map(|_| rng.random_range(0..6)).collect();
            let acc = topk_accuracy(&q, &g, 3, &truth, &[1, 2, 3, 6]).unwrap();
            for k in [1, 2, 3, 6] {
                assert_eq!(acc[&k], oracle(&q, &g, 3, &truth, k));
            }
        }
    }

    proptest! {
        #[test]
        fn monotone_in_k(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g: Vec<f64> = (0..12 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let q: Vec<f64> = (0..5 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let truth: Vec<usize> = (0..5).map(|_| rng.random_range(0..12)).collect();
            let acc = topk_accuracy(&q, &g, 4, &truth, &[1, 3, 5, 12]).unwrap();
            prop_assert!(acc[&1] <= acc[&3] && acc[&3] <= acc[&5]);
            prop_assert_eq!(acc[&12], 1.0);
        }
    }

    #[test]
    fn chance_level_for_uncorrelated_queries() {
        // 200-way gallery, independent Gaussian queries: top-1 ~ Binomial(n, 1/200)/n
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = 16;
        let g: Vec<f64> = (0..200 * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = 4000;
        let q: Vec<f64> = (0..n * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let truth: Vec<usize> = (0..n).map(|i| i % 200).collect();
        let acc = topk_accuracy(&q, &g, w, &truth, &[1]).unwrap()[&1];
        let p = 1.0 / 200.0;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((acc - p).abs() <= 3.0 * sigma, "{acc}");
    }

    #[test]
    fn per_view_uses_only_the_selected_segment() {
        let d = 2;
        // view b is informative, views f and r point the wrong way
        let gallery = vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, /**/ 0.0, 1.0, 1.0, 0.0, 1.0, 0.0];
        let feats = vec![1.0, 0.1, 1.0, 0.0, 1.0, 0.0];
        let b = per_view_retrieval(&feats, &gallery, d, ViewSet::new(&[View::Contour]).unwrap(), &[0], 2).unwrap();
        assert_eq!(b.accuracy.top1, 1.0);
        assert_eq!(b.queries[0].ranked, vec![0, 1]);
        let f = per_view_retrieval(&feats, &gallery, d, ViewSet::new(&[View::Object]).unwrap(), &[0], 2).unwrap();
        assert_eq!(f.accuracy.top1, 0.0);
        let all = view_accuracies(&feats, &gallery, d, &[0]).unwrap();
        assert_eq!(all.keys().cloned().collect::<Vec<_>>(), vec!["BOM", "FO", "RS", "Triple"]);
    }

    #[test]
    fn mean_std() {
        let runs = [TopK::from_array([0.2, 0.4, 0.6]), TopK::from_array([0.4, 0.4, 1.0])];
        let (m, s) = TopK::mean_std(&runs);
        assert!((m.top1 - 0.3).abs() < 1e-12);
        assert!((s.top1 - (0.02f64).sqrt()).abs() < 1e-12);
        assert_eq!(s.top3, 0.0);
    }
}
