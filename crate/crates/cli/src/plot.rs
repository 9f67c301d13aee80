use std::path::Path;

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};

use hvdecode::evaluation::RsMatrix;

/// Blue (−1) to white (0) to red (+1).
fn diverging(v: f32) -> Rgb<u8> {
    let v = v.clamp(-1.0, 1.0);
    let fade = |x: f32| (255.0 * (1.0 - x)).round() as u8;
    if v >= 0.0 {
        Rgb([255, fade(v), fade(v)])
    } else {
        Rgb([fade(-v), fade(-v), 255])
    }
}

/// Square heatmap, at least ~512 px wide, with black lines between
/// category blocks.
pub fn write_heatmap(path: &Path, m: &RsMatrix) -> Result<()> {
    let cell = (512 / m.size.max(1)).max(1) as u32;
    let side = cell * m.size as u32;
    let mut img = RgbImage::from_fn(side, side, |x, y| diverging(m.at((y / cell) as usize, (x / cell) as usize)));
    for b in m.blocks.iter().skip(1) {
        let p = b.start as u32 * cell;
        for t in 0..side {
            img.put_pixel(p, t, Rgb([0, 0, 0]));
            img.put_pixel(t, p, Rgb([0, 0, 0]));
        }
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).ok();
    }
    img.save(path).with_context(|| format!("writing {}", path.display()))
}
