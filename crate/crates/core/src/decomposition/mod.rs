//! Tri-view stimulus decomposition (mask / foreground / raw scene) and
//! frozen-embedding extraction through provider interfaces.

pub mod cache;
pub mod image;
pub mod providers;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use cache::EmbeddingCache;
pub use image::{binarize, extract_foreground, BinaryMask, Image, SaliencyMap};
pub use providers::{EmbeddingProvider, SaliencyProvider};

use crate::error::{Error, Result};

/// Default working resolution `D`.
pub const DEFAULT_RESOLUTION: usize = 512;
/// Default embedding width `d`.
pub const DEFAULT_EMBED_DIM: usize = 1024;
pub const DEFAULT_TAU: f64 = 0.5;

/// The three hierarchy levels, in concatenation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum View {
    /// Binary object mask (BOM), `b`.
    #[serde(rename = "BOM")]
    Contour,
    /// Foreground object (FO), `f`.
    #[serde(rename = "FO")]
    Object,
    /// Raw scene (RS), `r`.
    #[serde(rename = "RS")]
    Context,
}

impl View {
    pub const ALL: [View; 3] = [View::Contour, View::Object, View::Context];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn short(self) -> &'static str {
        match self {
            View::Contour => "BOM",
            View::Object => "FO",
            View::Context => "RS",
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for View {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bom" | "b" | "contour" | "mask" => Ok(View::Contour),
            "fo" | "f" | "object" | "foreground" => Ok(View::Object),
            "rs" | "r" | "context" | "raw" | "scene" => Ok(View::Context),
            other => Err(Error::InvalidArgument(format!("unknown view `{other}`"))),
        }
    }
}

/// `(I_b, I_f, I_r)` plus the threshold that produced the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulusTriplet {
    pub mask: BinaryMask,
    pub foreground: Image<f32>,
    pub raw: Image<f32>,
    pub tau: f32,
}

impl StimulusTriplet {
    /// Checks `I_f = I_r ⊙ I_b` exactly.
    pub fn check_invariant(&self) -> Result<()> {
        let expect = extract_foreground(&self.raw, &self.mask)?;
        if expect != self.foreground {
            return Err(Error::InvalidArgument(
                "foreground differs from raw ⊙ mask".into(),
            ));
        }
        Ok(())
    }
}

/// Normalizes an image to `size × size`, runs the saliency provider and
/// derives the mask and foreground views.
pub fn decompose(
    image_id: &str,
    image: &Image<f32>,
    saliency: &dyn SaliencyProvider,
    tau: f32,
    size: usize,
) -> Result<StimulusTriplet> {
    let raw = image.resize_bilinear(size, size);
    let map = saliency.saliency(image_id, &raw).map_err(|message| Error::Provider {
        provider: saliency.provider_id(),
        image: image_id.to_string(),
        message,
    })?;
    if map.height != size || map.width != size {
        return Err(Error::Provider {
            provider: saliency.provider_id(),
            image: image_id.to_string(),
            message: format!("saliency map {}×{}, expected {size}×{size}", map.height, map.width),
        });
    }
    let map = SaliencyMap::new(map.height, map.width, map.values).map_err(|e| Error::Provider {
        provider: saliency.provider_id(),
        image: image_id.to_string(),
        message: e.to_string(),
    })?;
    let mask = binarize(&map, tau)?;
    let foreground = extract_foreground(&raw, &mask)?;
    Ok(StimulusTriplet {
        mask,
        foreground,
        raw,
        tau,
    })
}

/// Frozen embeddings `(C_b, C_f, C_r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTriplet {
    pub contour: Vec<f32>,
    pub object: Vec<f32>,
    pub context: Vec<f32>,
}

impl EmbeddingTriplet {
    pub fn dim(&self) -> usize {
        self.contour.len()
    }

    pub fn view(&self, v: View) -> &[f32] {
        match v {
            View::Contour => &self.contour,
            View::Object => &self.object,
            View::Context => &self.context,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        for v in View::ALL {
            let e = self.view(v);
            if e.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: e.len(),
                });
            }
            if e.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument(format!("non-finite {v} embedding")));
            }
            if e.iter().all(|&x| x == 0.0) {
                return Err(Error::ZeroNorm {
                    matrix: "embedding",
                    row: v.index(),
                });
            }
        }
        Ok(())
    }

    /// `b ‖ f ‖ r`
    pub fn concat(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(3 * self.dim());
        out.extend_from_slice(&self.contour);
        out.extend_from_slice(&self.object);
        out.extend_from_slice(&self.context);
        out
    }
}

/// Rows of `b ‖ f ‖ r` embeddings, one per image.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    data: Vec<f32>,
    dim: usize,
}

impl EmbeddingTable {
    pub fn new(data: Vec<f32>, dim: usize) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(3 * dim) {
            return Err(Error::Shape(format!(
                "{} values do not form rows of 3×{dim}",
                data.len()
            )));
        }
        Ok(Self { data, dim })
    }

    pub fn from_triplets(rows: &[EmbeddingTriplet]) -> Result<Self> {
        let dim = rows.first().map(|r| r.dim()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * 3 * dim);
        for r in rows {
            r.validate(dim)?;
            data.extend(r.concat());
        }
        Self::new(data, dim)
    }

    pub fn len(&self) -> usize {
        self.data.len() / (3 * self.dim)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * 3 * self.dim..(i + 1) * 3 * self.dim]
    }

    pub fn view(&self, i: usize, v: View) -> &[f32] {
        let start = i * 3 * self.dim + v.index() * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn triplet(&self, i: usize) -> EmbeddingTriplet {
        EmbeddingTriplet {
            contour: self.view(i, View::Contour).to_vec(),
            object: self.view(i, View::Object).to_vec(),
            context: self.view(i, View::Context).to_vec(),
        }
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

/// Embeds the three views, serving from / filling `cache` when given.
///
/// The mask is handed to the provider as a 3-channel replication of the
/// binary map.
pub fn embed_triplet(
    image_id: &str,
    triplet: &StimulusTriplet,
    provider: &dyn EmbeddingProvider,
    cache: Option<&EmbeddingCache>,
) -> Result<EmbeddingTriplet> {
    let pid = provider.provider_id();
    let key = EmbeddingCache::key(&pid, triplet.tau, &triplet.raw);
    if let Some(c) = cache {
        if let Some(hit) = c.lookup(&pid, &key, provider.dim())? {
            return Ok(hit);
        }
    }
    let mask_img = triplet.mask.to_image::<f32>(triplet.raw.channels.max(3));
    let run = |img: &Image<f32>| {
        provider.embed(img).map_err(|message| Error::Provider {
            provider: pid.clone(),
            image: image_id.to_string(),
            message,
        })
    };
    let out = EmbeddingTriplet {
        contour: run(&mask_img)?,
        object: run(&triplet.foreground)?,
        context: run(&triplet.raw)?,
    };
    out.validate(provider.dim())?;
    if let Some(c) = cache {
        c.store(&pid, &key, &out)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::providers::{CenterSurroundSaliency, MeanPoolEmbedder};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, h: usize, w: usize) -> Image<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(h, w, 3, (0..h * w * 3).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    #[test]
    fn decompose_produces_consistent_triplet() {
        let img = random_image(3, 20, 30);
        let t = decompose("img", &img, &CenterSurroundSaliency::default(), 0.5, 16).unwrap();
        assert_eq!((t.raw.height, t.raw.width), (16, 16));
        t.check_invariant().unwrap();
    }

    #[test]
    fn stub_provider_is_deterministic() {
        let img = random_image(4, 8, 8);
        let t = decompose("img", &img, &CenterSurroundSaliency::default(), 0.5, 8).unwrap();
        let p = MeanPoolEmbedder::new(6);
        let a = embed_triplet("img", &t, &p, None).unwrap();
        let b = embed_triplet("img", &t, &p, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 6);
    }

    #[test]
    fn view_parsing() {
        assert_eq!("BOM".parse::<View>().unwrap(), View::Contour);
        assert_eq!("fo".parse::<View>().unwrap(), View::Object);
        assert_eq!("context".parse::<View>().unwrap(), View::Context);
        assert!("xyz".parse::<View>().is_err());
        assert_eq!(serde_json::to_string(&View::Object).unwrap(), "\"FO\"");
    }
}
