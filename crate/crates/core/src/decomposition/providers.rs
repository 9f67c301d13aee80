//! Provider interfaces for the external saliency and image-embedding
//! models, deterministic stand-ins for tests and offline runs, and a
//! subprocess adapter for real models.
//!
//! Subprocess contract: the program is invoked as
//! `<program> [args...] <input.tensor> <output.tensor>`. The input is a
//! `[H, W, C]` image in `[0, 1]`; the output must be `[H, W]` (saliency) or
//! `[d]` (embedding). Exit status 0 signals success.

use std::path::{Path, PathBuf};
use std::process::Command;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::decomposition::image::{Image, SaliencyMap};
use crate::error::{Error, Result};
use crate::tensor_file::{read_tensor, write_tensor, Tensor};

pub trait SaliencyProvider: Send + Sync {
    fn provider_id(&self) -> String;
    fn saliency(&self, image_id: &str, image: &Image<f32>) -> std::result::Result<SaliencyMap<f32>, String>;
}

/// Frozen image encoder. Must be deterministic per image with a fixed width.
pub trait EmbeddingProvider: Send + Sync {
    fn provider_id(&self) -> String;
    fn dim(&self) -> usize;
    fn embed(&self, image: &Image<f32>) -> std::result::Result<Vec<f32>, String>;
}

fn luminance(image: &Image<f32>) -> Vec<f32> {
    let c = image.channels;
    image
        .data
        .chunks_exact(c)
        .map(|px| {
            if c >= 3 {
                0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
            } else {
                px[0]
            }
        })
        .collect()
}

/// Box-blurred luminance contrast against the global mean, weighted by a
/// centre prior and rescaled to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct CenterSurroundSaliency {
    pub radius: usize,
}

impl Default for CenterSurroundSaliency {
    fn default() -> Self {
        Self { radius: 2 }
    }
}

impl SaliencyProvider for CenterSurroundSaliency {
    fn provider_id(&self) -> String {
        format!("center-surround-r{}", self.radius)
    }

    fn saliency(&self, _image_id: &str, image: &Image<f32>) -> std::result::Result<SaliencyMap<f32>, String> {
        let (h, w) = (image.height, image.width);
        let lum = luminance(image);
        let mean = lum.iter().sum::<f32>() / lum.len().max(1) as f32;
        let r = self.radius as isize;
        let mut out = vec![0f32; h * w];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let (mut acc, mut n) = (0f32, 0f32);
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (yy, xx) = (y + dy, x + dx);
                        if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                            acc += lum[yy as usize * w + xx as usize];
                            n += 1.0;
                        }
                    }
                }
                let cy = (y as f32 + 0.5) / h as f32 - 0.5;
                let cx = (x as f32 + 0.5) / w as f32 - 0.5;
                let prior = (-(cx * cx + cy * cy) / 0.18).exp();
                out[y as usize * w + x as usize] = (acc / n - mean).abs() * prior;
            }
        }
        let max = out.iter().cloned().fold(0f32, f32::max);
        if max > 0.0 {
            out.iter_mut().for_each(|v| *v = (*v / max).clamp(0.0, 1.0));
        }
        SaliencyMap::new(h, w, out).map_err(|e| e.to_string())
    }
}

/// Precomputed saliency maps: `<dir>/<image_id>.tensor` holding `[H, W]`.
#[derive(Debug, Clone)]
pub struct DirectorySaliency {
    pub dir: PathBuf,
}

impl SaliencyProvider for DirectorySaliency {
    fn provider_id(&self) -> String {
        "precomputed".into()
    }

    fn saliency(&self, image_id: &str, image: &Image<f32>) -> std::result::Result<SaliencyMap<f32>, String> {
        let t = read_tensor(&self.dir.join(format!("{image_id}.tensor"))).map_err(|e| e.to_string())?;
        if t.shape.len() != 2 {
            return Err(format!("saliency tensor has shape {:?}", t.shape));
        }
        let map = SaliencyMap::new(t.shape[0], t.shape[1], t.data).map_err(|e| e.to_string())?;
        if map.height == image.height && map.width == image.width {
            return Ok(map);
        }
        // stored at native resolution: resample to the working size
        let img = Image::new(map.height, map.width, 1, map.values).map_err(|e| e.to_string())?;
        let r = img.resize_bilinear(image.height, image.width);
        SaliencyMap::new(r.height, r.width, r.data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
            .map_err(|e| e.to_string())
    }
}

/// Mean of `dim` contiguous chunks of the flattened pixels.
#[derive(Debug, Clone)]
pub struct MeanPoolEmbedder {
    dim: usize,
}

impl MeanPoolEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl EmbeddingProvider for MeanPoolEmbedder {
    fn provider_id(&self) -> String {
        format!("meanpool-{}", self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, image: &Image<f32>) -> std::result::Result<Vec<f32>, String> {
        let n = image.data.len();
        if n < self.dim {
            return Err(format!("image has {n} values, fewer than dim {}", self.dim));
        }
        Ok((0..self.dim)
            .map(|i| {
                let (a, b) = (i * n / self.dim, (i + 1) * n / self.dim);
                image.data[a..b].iter().sum::<f32>() / (b - a) as f32
            })
            .collect())
    }
}

/// Area-averaged `grid × grid × 3` thumbnail plus a constant bias feature,
/// mapped through a seeded Gaussian projection. A blank image still gets a
/// nonzero embedding through the bias column.
#[derive(Debug, Clone)]
pub struct RandomProjectionEmbedder {
    dim: usize,
    seed: u64,
    grid: usize,
    weights: Vec<f32>,
}

impl RandomProjectionEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        let grid = 16;
        let inputs = grid * grid * 3 + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (inputs as f64).sqrt();
        let weights = (0..dim * inputs)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                (g * scale) as f32
            })
            .collect();
        Self {
            dim,
            seed,
            grid,
            weights,
        }
    }
}

impl EmbeddingProvider for RandomProjectionEmbedder {
    fn provider_id(&self) -> String {
        format!("randproj-{}-s{}", self.dim, self.seed)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, image: &Image<f32>) -> std::result::Result<Vec<f32>, String> {
        let g = self.grid;
        let mut feats = vec![0f32; g * g * 3 + 1];
        let mut counts = vec![0f32; g * g];
        for y in 0..image.height {
            let gy = y * g / image.height;
            for x in 0..image.width {
                let gx = x * g / image.width;
                counts[gy * g + gx] += 1.0;
                for c in 0..3 {
                    let v = image.at(y, x, c.min(image.channels - 1));
                    feats[(gy * g + gx) * 3 + c] += v;
                }
            }
        }
        for (i, n) in counts.iter().enumerate() {
            if *n > 0.0 {
                for c in 0..3 {
                    feats[i * 3 + c] = feats[i * 3 + c] / n - 0.5;
                }
            }
        }
        feats[g * g * 3] = 1.0;
        let k = feats.len();
        Ok((0..self.dim)
            .map(|i| crate::linalg::dot(&self.weights[i * k..(i + 1) * k], &feats))
            .collect())
    }
}

/// External program speaking the tensor-file contract above.
#[derive(Debug, Clone)]
pub struct CommandAdapter {
    pub program: String,
    pub args: Vec<String>,
}

impl CommandAdapter {
    fn run(&self, image: &Image<f32>) -> std::result::Result<Tensor, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let input = dir.path().join("input.tensor");
        let output = dir.path().join("output.tensor");
        let t = Tensor::new("image", vec![image.height, image.width, image.channels], image.data.clone())
            .map_err(|e| e.to_string())?;
        write_tensor(&input, &t).map_err(|e| e.to_string())?;
        let status = Command::new(&self.program)
            .args(&self.args)
            .arg(&input)
            .arg(&output)
            .status()
            .map_err(|e| format!("cannot launch `{}`: {e}", self.program))?;
        if !status.success() {
            return Err(format!("`{}` exited with {status}", self.program));
        }
        read_tensor(Path::new(&output)).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct CommandSaliency(pub CommandAdapter);

impl SaliencyProvider for CommandSaliency {
    fn provider_id(&self) -> String {
        format!("cmd-{}", sanitize(&self.0.program))
    }

    fn saliency(&self, _image_id: &str, image: &Image<f32>) -> std::result::Result<SaliencyMap<f32>, String> {
        let t = self.0.run(image)?;
        if t.shape != [image.height, image.width] {
            return Err(format!("saliency output shape {:?}", t.shape));
        }
        SaliencyMap::new(image.height, image.width, t.data).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct CommandEmbedder {
    pub adapter: CommandAdapter,
    pub dim: usize,
}

impl EmbeddingProvider for CommandEmbedder {
    fn provider_id(&self) -> String {
        format!("cmd-{}-{}", sanitize(&self.adapter.program), self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, image: &Image<f32>) -> std::result::Result<Vec<f32>, String> {
        let t = self.adapter.run(image)?;
        if t.data.len() != self.dim {
            return Err(format!("embedding has {} values, expected {}", t.data.len(), self.dim));
        }
        Ok(t.data)
    }
}

pub(crate) fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

/// Parses `center-surround[:radius]`, `dir:<path>` or
/// `cmd:<program> [args...]`.
pub fn saliency_from_spec(spec: &str) -> Result<Box<dyn SaliencyProvider>> {
    let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
    match kind {
        "center-surround" => {
            let radius = if rest.is_empty() {
                2
            } else {
                rest.parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad radius in `{spec}`")))?
            };
            Ok(Box::new(CenterSurroundSaliency { radius }))
        }
        "dir" if !rest.is_empty() => Ok(Box::new(DirectorySaliency { dir: rest.into() })),
        "cmd" if !rest.is_empty() => Ok(Box::new(CommandSaliency(parse_command(rest)))),
        _ => Err(Error::InvalidArgument(format!("unknown saliency provider `{spec}`"))),
    }
}

/// Parses `meanpool:<dim>`, `randproj:<dim>[:seed]` or
/// `cmd:<dim>:<program> [args...]`.
pub fn embedder_from_spec(spec: &str) -> Result<Box<dyn EmbeddingProvider>> {
    let bad = || Error::InvalidArgument(format!("unknown embedding provider `{spec}`"));
    let mut parts = spec.splitn(3, ':');
    let kind = parts.next().ok_or_else(bad)?;
    let dim: usize = parts.next().and_then(|d| d.parse().ok()).ok_or_else(bad)?;
    if dim == 0 {
        return Err(bad());
    }
    match kind {
        "meanpool" => Ok(Box::new(MeanPoolEmbedder::new(dim))),
        "randproj" => {
            let seed = parts.next().map(|s| s.parse().map_err(|_| bad())).transpose()?.unwrap_or(0);
            Ok(Box::new(RandomProjectionEmbedder::new(dim, seed)))
        }
        "cmd" => {
            let cmd = parts.next().ok_or_else(bad)?;
            Ok(Box::new(CommandEmbedder {
                adapter: parse_command(cmd),
                dim,
            }))
        }
        _ => Err(bad()),
    }
}

fn parse_command(s: &str) -> CommandAdapter {
    let mut words = s.split_whitespace().map(str::to_string);
    CommandAdapter {
        program: words.next().unwrap_or_default(),
        args: words.collect(),
    }
}
