//! PNG ingestion and export. Images travel as 8-bit PNG and map linearly to
//! [0, 1]; kernels export as 16-bit grayscale, max-normalized for viewing
//! (the container blob stays authoritative).

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Load an 8-bit PNG as `[h, w, c]` with values `v / 255`. Grayscale stays
/// single-channel; anything with color becomes RGB.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path)?;
    match img {
        DynamicImage::ImageLuma8(gray) => {
            let (w, h) = gray.dimensions();
            let data: Vec<f32> = gray.pixels().map(|p| f32::from(p.0[0]) / 255.0).collect();
            Tensor::new(vec![h as usize, w as usize, 1], data)
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            let mut data = Vec::with_capacity((w * h * 3) as usize);
            for p in rgb.pixels() {
                data.push(f32::from(p.0[0]) / 255.0);
                data.push(f32::from(p.0[1]) / 255.0);
                data.push(f32::from(p.0[2]) / 255.0);
            }
            Tensor::new(vec![h as usize, w as usize, 3], data)
        }
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Save a `[h, w, 1|3]` tensor as an 8-bit PNG, clipping to [0, 1].
pub fn save_image(path: &Path, t: &Tensor) -> Result<()> {
    let (h, w, c) = t.image_dims()?;
    match c {
        1 => {
            let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_fn(
                w as u32,
                h as u32,
                |x, y| Luma([to_u8(t.data()[y as usize * w + x as usize])]),
            );
            buf.save(path)?;
        }
        3 => {
            let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                let base = (y as usize * w + x as usize) * 3;
                Rgb([to_u8(t.data()[base]), to_u8(t.data()[base + 1]), to_u8(t.data()[base + 2])])
            });
            buf.save(path)?;
        }
        other => return Err(Error::Shape(format!("cannot save {other}-channel image as PNG"))),
    }
    Ok(())
}

/// Save a kernel canvas as 16-bit grayscale, scaled so its peak maps to the
/// full range.
pub fn save_kernel_png(path: &Path, canvas: &Tensor) -> Result<()> {
    let (h, w, c) = canvas.image_dims()?;
    if c != 1 {
        return Err(Error::Shape("kernel canvas must be single-channel".into()));
    }
    let peak = canvas.data().iter().copied().fold(0.0f32, f32::max);
    let scale = if peak > 0.0 { 65535.0 / peak } else { 0.0 };
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let v = canvas.data()[y as usize * w + x as usize].max(0.0);
        Luma([(v * scale).round().min(65535.0) as u16])
    });
    buf.save(path)?;
    Ok(())
}
