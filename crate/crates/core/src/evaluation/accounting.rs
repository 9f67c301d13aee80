//! Learnable-parameter and compute accounting, with a reconciliation
//! against the published totals.

use serde::{Deserialize, Serialize};

use crate::encoder::PoolMode;
use crate::model::{HierarchicalModel, ModelConfig};
use crate::nn::Parameterized;
use crate::{Result, Scalar};

/// Published learnable-parameter total ("7924.488 K").
pub const REFERENCE_PARAMETERS: usize = 7_924_488;
/// Published compute total ("127.973 M" FLOPs).
pub const REFERENCE_FLOPS: f64 = 127.973e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerItem {
    pub component: String,
    pub params: usize,
    /// Design decision that fixes this count.
    pub decision: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub total: usize,
    pub delta_vs_reference: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterReport {
    pub total: usize,
    pub reference_total: usize,
    pub delta_vs_reference: i64,
    pub per_module: Vec<(String, usize)>,
    /// Sums exactly to `total`.
    pub ledger: Vec<LedgerItem>,
    /// Totals under alternative readings of unspecified widths.
    pub variants: Vec<Variant>,
}

fn category(name: &str) -> usize {
    if name.ends_with(".temporal") {
        0
    } else if name.contains(".bn1.") || name.contains(".bn2.") {
        1
    } else if name.ends_with(".spatial") {
        2
    } else if name.contains(".proj.") {
        3
    } else if name.contains(".attn.") {
        4
    } else if name.contains(".norm.") {
        5
    } else if name.starts_with("heads.") {
        6
    } else {
        7
    }
}

fn ledger_decisions(cfg: &ModelConfig) -> [(&'static str, String); 8] {
    let e = &cfg.encoder;
    let l = cfg.tokens().unwrap_or(0);
    let hd = cfg.cahi.head_dim_for(e.proj_dim);
    [
        (
            "temporal conv kernels (3 streams)",
            format!(
                "n_filters = {} (unspecified, EEGNet-family convention), kernel 1×{}; no bias because batch-norm cancels it",
                e.n_filters, e.temporal_kernel
            ),
        ),
        (
            "batch-norm affine (2 per stream)",
            "gamma and beta after the pooled temporal conv and after the spatial conv".into(),
        ),
        (
            "spatial conv kernels (3 streams)",
            format!(
                "{}×1 kernel over all {} filter maps, {} output maps, no bias",
                e.channels, e.n_filters, e.n_filters
            ),
        ),
        (
            "1×1 token projection (3 streams)",
            format!("proj_dim m = {} (unspecified)", e.proj_dim),
        ),
        (
            "cross-attention projections",
            format!(
                "{} block(s) per direction, {} heads, d_k = {hd}, full-width per-head W^Q/W^K/W^V, W^O and output bias",
                if cfg.cahi.active() { cfg.cahi.n_layers } else { 0 },
                cfg.cahi.heads
            ),
        ),
        (
            "integration layer norms",
            "LayerNorm(m) after each residual cross-attention block".into(),
        ),
        (
            "flatten projections (3 views)",
            format!(
                "temporal-token reading: T = {} gives L = {l} tokens; L·m = {} is mapped to d = {} by a learned linear layer",
                cfg.timepoints,
                l * e.proj_dim,
                cfg.embed_dim
            ),
        ),
        ("logit scale", "single learnable temperature".into()),
    ]
}

fn total_for(cfg: &ModelConfig) -> Result<usize> {
    Ok(HierarchicalModel::<f32>::new(cfg, 0)?.num_parameters())
}

pub fn count_parameters<S: Scalar>(model: &HierarchicalModel<S>) -> Result<ParameterReport> {
    let mut sums = [0usize; 8];
    model.visit_params("", &mut |name, p| sums[category(name)] += p.numel());
    let total = model.num_parameters();
    let ledger = ledger_decisions(&model.config)
        .into_iter()
        .zip(sums)
        .map(|((component, decision), params)| LedgerItem {
            component: component.into(),
            params,
            decision,
        })
        .collect();

    let delta = |t: usize| t as i64 - REFERENCE_PARAMETERS as i64;
    let mut variants = vec![Variant {
        name: "this configuration".into(),
        total,
        delta_vs_reference: delta(total),
    }];
    let long = ModelConfig {
        timepoints: 250,
        ..model.config.clone()
    };
    if let Ok(t250) = total_for(&long) {
        let d = long.embed_dim;
        variants.push(Variant {
            name: "T = 250 samples per epoch (250 Hz preprocessing)".into(),
            total: t250,
            delta_vs_reference: delta(t250),
        });
        // residual d→d linear layer plus LayerNorm(d) on each view's head
        let residual_head = 3 * (d * d + d + 2 * d);
        variants.push(Variant {
            name: "T = 250 and residual projection heads (Linear d→d + LayerNorm per view)".into(),
            total: t250 + residual_head,
            delta_vs_reference: delta(t250 + residual_head),
        });
        let conv_bias = 3 * 2 * long.encoder.n_filters;
        variants.push(Variant {
            name: "as above, plus biases on both convolutions".into(),
            total: t250 + residual_head + conv_bias,
            delta_vs_reference: delta(t250 + residual_head + conv_bias),
        });
    }
    Ok(ParameterReport {
        total,
        reference_total: REFERENCE_PARAMETERS,
        delta_vs_reference: delta(total),
        per_module: model.parameter_breakdown(),
        ledger,
        variants,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub layer: String,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopReport {
    pub convention: String,
    pub per_layer: Vec<LayerCost>,
    pub total_macs: u64,
    pub total_flops: u64,
    pub reference_flops: f64,
    pub ratio_to_reference: f64,
}

/// Analytic multiply-accumulate count of one forward pass for one epoch
/// (direct convolution, no fusion).
pub fn estimate_flops(cfg: &ModelConfig) -> Result<FlopReport> {
    let e = &cfg.encoder;
    let (f, c, kt, m, d) = (e.n_filters as u64, e.channels as u64, e.temporal_kernel as u64, e.proj_dim as u64, cfg.embed_dim as u64);
    let w = e.conv_width(cfg.timepoints)? as u64;
    let l = cfg.tokens()? as u64;
    let taps = match e.pool_mode {
        PoolMode::Single => e.pool_kernel,
        PoolMode::Double => e.pool_kernel + e.pool_stride - 1,
    } as u64;
    let mut per_layer = vec![
        LayerCost { layer: "temporal conv".into(), macs: 3 * f * c * w * kt },
        LayerCost { layer: "average pool".into(), macs: 3 * f * c * l * taps },
        LayerCost { layer: "batch-norm".into(), macs: 3 * (f * c * l + f * l) },
        LayerCost { layer: "spatial conv".into(), macs: 3 * f * f * c * l },
        LayerCost { layer: "token projection".into(), macs: 3 * m * f * l },
    ];
    if cfg.cahi.active() {
        let h = cfg.cahi.heads as u64;
        let dk = cfg.cahi.head_dim_for(e.proj_dim) as u64;
        let blocks = 2 * cfg.cahi.n_layers as u64;
        per_layer.push(LayerCost {
            layer: "cross-attention Q/K/V projections".into(),
            macs: blocks * 3 * l * m * h * dk,
        });
        per_layer.push(LayerCost {
            layer: "cross-attention scores and weighted sum".into(),
            macs: blocks * 2 * h * l * l * dk,
        });
        per_layer.push(LayerCost {
            layer: "cross-attention output projection".into(),
            macs: blocks * l * h * dk * m,
        });
        per_layer.push(LayerCost {
            layer: "layer norm".into(),
            macs: blocks * l * m,
        });
    }
    per_layer.push(LayerCost {
        layer: "flatten projections".into(),
        macs: 3 * l * m * d,
    });
    let total_macs: u64 = per_layer.iter().map(|x| x.macs).sum();
    let total_flops = 2 * total_macs;
    Ok(FlopReport {
        convention: "1 MAC = 2 FLOPs; one epoch, forward only; pooling and normalization counted as one MAC per input tap/element; ELU, softmax exponentials and dropout not counted".into(),
        per_layer,
        total_macs,
        total_flops,
        reference_flops: REFERENCE_FLOPS,
        ratio_to_reference: total_flops as f64 / REFERENCE_FLOPS,
    })
}
