//! Procedurally generated grayscale images for desk-scale experiments: a
//! smooth gradient background with a filled rectangle and disk. Values are
//! quantized to the 8-bit grid so PNG round-trips are exact.

use std::path::{Path, PathBuf};

use rand::Rng as _;

use crate::diffcore::Tensor;
use crate::error::Result;
use crate::pngio;
use crate::rng;

/// One seeded toy image, `[size, size, 1]` in [0, 1].
pub fn toy_image(size: usize, seed: u64) -> Tensor {
    let mut r = rng::seeded(seed);
    let s = size as f32;

    let base = r.gen_range(0.15..0.45);
    let slope_r = r.gen_range(-0.3..0.3);
    let slope_c = r.gen_range(-0.3..0.3);

    let rect_r0 = r.gen_range(0.1..0.5) * s;
    let rect_c0 = r.gen_range(0.1..0.5) * s;
    let rect_h = r.gen_range(0.2..0.4) * s;
    let rect_w = r.gen_range(0.2..0.4) * s;
    let rect_v = r.gen_range(0.6..0.95);

    let disk_r = r.gen_range(0.25..0.75) * s;
    let disk_c = r.gen_range(0.25..0.75) * s;
    let disk_rad = r.gen_range(0.1..0.22) * s;
    let disk_v = r.gen_range(0.0..0.35);

    let mut data = Vec::with_capacity(size * size);
    for row in 0..size {
        for col in 0..size {
            let (rf, cf) = (row as f32, col as f32);
            let mut v = base + slope_r * rf / s + slope_c * cf / s;
            if rf >= rect_r0 && rf < rect_r0 + rect_h && cf >= rect_c0 && cf < rect_c0 + rect_w {
                v = rect_v;
            }
            let dr = rf - disk_r;
            let dc = cf - disk_c;
            if dr * dr + dc * dc <= disk_rad * disk_rad {
                v = disk_v;
            }
            // Snap to the 8-bit grid for exact PNG round-trips.
            let q = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
            data.push(q);
        }
    }
    Tensor::new(vec![size, size, 1], data).expect("sized buffer")
}

pub fn generate_toy_images(count: usize, size: usize, seed: u64) -> Vec<Tensor> {
    (0..count)
        .map(|i| toy_image(size, rng::derive_seed(seed, &["toy-image", &i.to_string()])))
        .collect()
}

/// Write `count` toy images as `img_NNNN.png` under `dir`; returns the paths
/// in generation order.
pub fn write_toy_images(dir: &Path, count: usize, size: usize, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(count);
    for (i, img) in generate_toy_images(count, size, seed).iter().enumerate() {
        let path = dir.join(format!("img_{i:04}.png"));
        pngio::save_image(&path, img)?;
        paths.push(path);
    }
    Ok(paths)
}
