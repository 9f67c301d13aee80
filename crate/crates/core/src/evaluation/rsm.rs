use serde::{Deserialize, Serialize};

use crate::dataio::ClassLabel;
use crate::objective::cosine_matrix;
use crate::tensor_file::Tensor;
use crate::{Error, Result, Scalar};

/// Contiguous run of one category along both RSM axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryBlock {
    pub label: ClassLabel,
    pub start: usize,
    pub len: usize,
}

/// Cosine similarities of items reordered into category blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsMatrix {
    pub size: usize,
    /// `[size × size]`, row-major, in block order.
    pub values: Vec<f32>,
    /// `order[i]` is the input row shown at position `i`.
    pub order: Vec<usize>,
    pub blocks: Vec<CategoryBlock>,
}

impl RsMatrix {
    pub fn at(&self, i: usize, j: usize) -> f32 {
        self.values[i * self.size + j]
    }

    pub fn to_tensor(&self, name: &str) -> Result<Tensor> {
        Tensor::new(name, vec![self.size, self.size], self.values.clone())
    }
}

/// RSM of `[M × k]` features; rows are stably grouped by `labels` in
/// [`ClassLabel::ALL`] order.
pub fn compute_rsm<S: Scalar>(features: &[S], k: usize, labels: &[ClassLabel]) -> Result<RsMatrix> {
    let m = features.len() / k;
    if labels.len() != m {
        return Err(Error::Shape(format!("{} labels for {m} feature rows", labels.len())));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by_key(|&i| labels[i]);
    let mut blocks: Vec<CategoryBlock> = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        match blocks.last_mut() {
            Some(b) if b.label == labels[i] => b.len += 1,
            _ => blocks.push(CategoryBlock {
                label: labels[i],
                start: pos,
                len: 1,
            }),
        }
    }
    let mut sorted = Vec::with_capacity(features.len());
    for &i in &order {
        sorted.extend_from_slice(&features[i * k..(i + 1) * k]);
    }
    let values = cosine_matrix(&sorted, &sorted, k)?.into_iter().map(|v| v.to_f32_lossy()).collect();
    Ok(RsMatrix {
        size: m,
        values,
        order,
        blocks,
    })
}
