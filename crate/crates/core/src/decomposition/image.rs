use crate::error::{Error, Result};
use crate::Scalar;

/// Interleaved `height × width × channels` image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<S> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Image<S> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "image {height}×{width}×{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![S::zero(); height * width * channels],
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> S {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Bilinear resampling with half-pixel centres (edge-clamped).
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Self {
        if out_h == self.height && out_w == self.width {
            return self.clone();
        }
        let mut out = Self::zeros(out_h, out_w, self.channels);
        let sy = self.height as f64 / out_h as f64;
        let sx = self.width as f64 / out_w as f64;
        let clamp = |v: f64, hi: usize| v.max(0.0).min((hi - 1) as f64);
        for y in 0..out_h {
            let fy = clamp((y as f64 + 0.5) * sy - 0.5, self.height);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = S::lit(fy - y0 as f64);
            for x in 0..out_w {
                let fx = clamp((x as f64 + 0.5) * sx - 0.5, self.width);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = S::lit(fx - x0 as f64);
                for c in 0..self.channels {
                    let top = self.at(y0, x0, c) * (S::one() - wx) + self.at(y0, x1, c) * wx;
                    let bot = self.at(y1, x0, c) * (S::one() - wx) + self.at(y1, x1, c) * wx;
                    out.data[(y * out_w + x) * self.channels + c] = top * (S::one() - wy) + bot * wy;
                }
            }
        }
        out
    }

    /// Little-endian `f32` bytes prefixed by the shape; the canonical form
    /// hashed for cache keys.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.data.len() * 4);
        for d in [self.height, self.width, self.channels] {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
        }
        out
    }
}

/// Per-pixel foreground probability.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap<S> {
    pub height: usize,
    pub width: usize,
    pub values: Vec<S>,
}

impl<S: Scalar> SaliencyMap<S> {
    /// Range-checked constructor: every value must lie in `[0, 1]`.
    pub fn new(height: usize, width: usize, values: Vec<S>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "saliency map {height}×{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(*v >= S::zero() && *v <= S::one())) {
            return Err(Error::InvalidArgument(format!(
                "saliency value {} at pixel {i} outside [0, 1]",
                values[i]
            )));
        }
        Ok(Self { height, width, values })
    }
}

/// Strictly binary object mask (`I_b`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub values: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape("mask size does not match its dimensions".into()));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::InvalidArgument("mask values must be 0 or 1".into()));
        }
        Ok(Self { height, width, values })
    }

    pub fn coverage(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len().max(1) as f64
    }

    /// Mask rendered as an image with the binary map replicated over
    /// `channels` colour channels.
    pub fn to_image<S: Scalar>(&self, channels: usize) -> Image<S> {
        let mut data = Vec::with_capacity(self.values.len() * channels);
        for &v in &self.values {
            let s = if v == 1 { S::one() } else { S::zero() };
            data.extend(std::iter::repeat_n(s, channels));
        }
        Image {
            height: self.height,
            width: self.width,
            channels,
            data,
        }
    }
}

/// `I_b = 1[s > tau]`; ties at exactly `tau` map to 0.
pub fn binarize<S: Scalar>(s: &SaliencyMap<S>, tau: S) -> Result<BinaryMask> {
    if !(tau >= S::zero() && tau <= S::one()) {
        return Err(Error::InvalidArgument(format!("threshold {tau} outside [0, 1]")));
    }
    Ok(BinaryMask {
        height: s.height,
        width: s.width,
        values: s.values.iter().map(|&v| u8::from(v > tau)).collect(),
    })
}

/// `I_f = I_r ⊙ I_b`, the mask broadcast over colour channels.
pub fn extract_foreground<S: Scalar>(raw: &Image<S>, mask: &BinaryMask) -> Result<Image<S>> {
    if raw.height != mask.height || raw.width != mask.width {
        return Err(Error::Shape(format!(
            "image {}×{} vs mask {}×{}",
            raw.height, raw.width, mask.height, mask.width
        )));
    }
    let c = raw.channels;
    let mut out = raw.clone();
    for (px, &m) in out.data.chunks_exact_mut(c).zip(&mask.values) {
        if m == 0 {
            px.fill(S::zero());
        }
    }
    Ok(out)
}
