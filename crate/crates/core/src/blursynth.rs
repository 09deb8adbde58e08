//! Motion-blur synthesis: random camera-shake trajectories rasterized onto a
//! fixed 28x28 canvas, dataset generation, and the forward observation model
//! `y = i (*) k + n`.
//!
//! The trajectory model is a velocity random walk: the heading angle diffuses
//! with Gaussian increments and occasionally takes a large-angle impulse
//! deflection. The polyline is laid out at exactly the requested arc length,
//! centered on the canvas, and rescaled to fit in the rare case it wanders
//! outside the usable area.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{kernels, Tensor};
use crate::error::{Error, Result};
use crate::generators::io::{
    read_container, validate_entries, write_container, BlobEntry, FORMAT_VERSION,
};
use crate::rng;

/// Side of the square kernel canvas, matching the blur decoder output.
pub const KERNEL_CANVAS: usize = 28;

/// Hard validity range for trajectory lengths, in pixels of arc.
pub const LENGTH_LIMITS: (f32, f32) = (1.0, 28.0);

/// Dataset range used throughout: small to very large blurs.
pub const LENGTH_RANGE: (f32, f32) = (5.0, 28.0);

const SUBSTEP: f64 = 0.25;
const ANGLE_SIGMA: f64 = 0.5; // per sqrt(pixel) of heading diffusion
const IMPULSE_PER_PIXEL: f64 = 0.08;
// Samples must splat strictly inside the canvas, one pixel of margin.
const USABLE_HALF_EXTENT: f64 = (KERNEL_CANVAS as f64) / 2.0 - 1.5;

/// Nonnegative 2-D kernel on the fixed canvas, entries summing to one.
#[derive(Debug, Clone)]
pub struct BlurKernel {
    canvas: Tensor,
    length: f32,
}

impl BlurKernel {
    /// Normalize `canvas` to unit mass and adopt it; rejects negative values
    /// and zero total mass.
    pub fn from_canvas(canvas: Tensor, length: f32) -> Result<Self> {
        if canvas.shape() != [KERNEL_CANVAS, KERNEL_CANVAS] {
            return Err(Error::Shape(format!(
                "kernel canvas must be {KERNEL_CANVAS}x{KERNEL_CANVAS}, got {:?}",
                canvas.shape()
            )));
        }
        if canvas.data().iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Numeric("kernel canvas has negative or non-finite mass".into()));
        }
        let total: f64 = canvas.data().iter().map(|&v| f64::from(v)).sum();
        if total <= 0.0 {
            return Err(Error::Numeric("kernel canvas has zero mass".into()));
        }
        let data: Vec<f32> = canvas.data().iter().map(|&v| (f64::from(v) / total) as f32).collect();
        Ok(BlurKernel {
            canvas: Tensor::new(vec![KERNEL_CANVAS, KERNEL_CANVAS], data)?,
            length,
        })
    }

    pub fn canvas(&self) -> &Tensor {
        &self.canvas
    }

    pub fn length(&self) -> f32 {
        self.length
    }

    pub fn sum(&self) -> f64 {
        self.canvas.data().iter().map(|&v| f64::from(v)).sum()
    }
}

/// Blurry observation plus provenance when synthetic. Solvers consume the
/// unclipped `y_raw`; the clipped copy exists for visualization only.
#[derive(Debug, Clone)]
pub struct Observation {
    pub y_raw: Tensor,
    pub y_clipped: Tensor,
    pub truth: Option<ObservationTruth>,
}

#[derive(Debug, Clone)]
pub struct ObservationTruth {
    pub image: Tensor,
    pub kernel: BlurKernel,
    pub noise_sigma: f32,
    pub seed: u64,
}

impl Observation {
    /// Wrap an externally supplied blurry image (no ground truth).
    pub fn from_raw(y: Tensor) -> Self {
        let clipped: Vec<f32> = y.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let y_clipped = Tensor::new(y.shape().to_vec(), clipped).expect("same shape");
        Observation { y_raw: y, y_clipped, truth: None }
    }
}

/// A camera-shake path of total arc length `length`, centered on the canvas.
/// Points are uniformly spaced along the path; coordinates are (row, col) in
/// canvas units.
pub fn random_trajectory(length: f32, seed: u64) -> Result<Vec<(f64, f64)>> {
    if !(LENGTH_LIMITS.0..=LENGTH_LIMITS.1).contains(&length) {
        return Err(Error::Range(format!(
            "trajectory length {length} outside [{}, {}]",
            LENGTH_LIMITS.0, LENGTH_LIMITS.1
        )));
    }
    let mut r = rng::seeded(seed);
    let steps = ((f64::from(length) / SUBSTEP).round() as usize).max(1);
    let ds = f64::from(length) / steps as f64;

    let mut theta: f64 = r.gen_range(0.0..std::f64::consts::TAU);
    let mut points = Vec::with_capacity(steps + 1);
    let (mut y, mut x) = (0.0f64, 0.0f64);
    points.push((y, x));
    for _ in 0..steps {
        let diffuse: f64 = StandardNormal.sample(&mut r);
        theta += diffuse * ANGLE_SIGMA * ds.sqrt();
        if r.gen_bool((IMPULSE_PER_PIXEL * ds).min(1.0)) {
            let magnitude = r.gen_range(std::f64::consts::FRAC_PI_4..2.4);
            let sign = if r.gen_bool(0.5) { 1.0 } else { -1.0 };
            theta += sign * magnitude;
        }
        y += ds * theta.sin();
        x += ds * theta.cos();
        points.push((y, x));
    }

    center_and_fit(&mut points);
    Ok(points)
}

/// Translate the bounding-box center to the canvas center; shrink about the
/// center if the path exceeds the usable area (rescale-to-fit).
fn center_and_fit(points: &mut [(f64, f64)]) {
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for (y, x) in points.iter() {
        ymin = ymin.min(*y);
        ymax = ymax.max(*y);
        xmin = xmin.min(*x);
        xmax = xmax.max(*x);
    }
    let cy = (ymin + ymax) / 2.0;
    let cx = (xmin + xmax) / 2.0;
    let half = ((ymax - ymin) / 2.0).max((xmax - xmin) / 2.0);
    let scale = if half > USABLE_HALF_EXTENT { USABLE_HALF_EXTENT / half } else { 1.0 };
    let center = KERNEL_CANVAS as f64 / 2.0;
    for (y, x) in points.iter_mut() {
        *y = (*y - cy) * scale + center;
        *x = (*x - cx) * scale + center;
    }
}

fn polyline_length(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| {
            let (dy, dx) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            (dy * dy + dx * dx).sqrt()
        })
        .sum()
}

/// Point at arc-length parameter `s` along the polyline.
fn point_at(points: &[(f64, f64)], s: f64) -> (f64, f64) {
    let mut remaining = s;
    for w in points.windows(2) {
        let (dy, dx) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
        let seg = (dy * dy + dx * dx).sqrt();
        if seg >= remaining || seg <= 0.0 {
            if seg <= 0.0 {
                continue;
            }
            let t = remaining / seg;
            return (w[0].0 + t * dy, w[0].1 + t * dx);
        }
        remaining -= seg;
    }
    *points.last().expect("non-empty")
}

/// Rasterize a trajectory into a kernel: one unit of mass per uniformly
/// spaced arc sample (midpoint rule, about one sample per pixel of arc),
/// splatted bilinearly onto the canvas, then normalized to unit mass.
pub fn rasterize(trajectory: &[(f64, f64)]) -> Result<BlurKernel> {
    if trajectory.is_empty() {
        return Err(Error::Usage("rasterize: empty trajectory".into()));
    }
    let arc = polyline_length(trajectory);
    let samples = (arc.ceil() as usize).max(1);
    let mut canvas = vec![0.0f64; KERNEL_CANVAS * KERNEL_CANVAS];
    for j in 0..samples {
        let s = (j as f64 + 0.5) / samples as f64 * arc;
        let (y, x) = point_at(trajectory, s);
        splat_bilinear(&mut canvas, y, x);
    }
    let data: Vec<f32> = canvas.iter().map(|&v| v as f32).collect();
    BlurKernel::from_canvas(
        Tensor::new(vec![KERNEL_CANVAS, KERNEL_CANVAS], data)?,
        arc as f32,
    )
}

fn splat_bilinear(canvas: &mut [f64], y: f64, x: f64) {
    let n = KERNEL_CANVAS as isize;
    let ry = y - 0.5;
    let rx = x - 0.5;
    let r0 = ry.floor();
    let c0 = rx.floor();
    let fy = ry - r0;
    let fx = rx - c0;
    for (dr, wy) in [(0isize, 1.0 - fy), (1, fy)] {
        for (dc, wx) in [(0isize, 1.0 - fx), (1, fx)] {
            let r = r0 as isize + dr;
            let c = c0 as isize + dc;
            let wgt = wy * wx;
            if wgt > 0.0 && (0..n).contains(&r) && (0..n).contains(&c) {
                canvas[(r * n + c) as usize] += wgt;
            }
        }
    }
}

/// Seeded train/test kernel sets with lengths uniform in `length_range`.
/// `test_fraction` of `count` kernels (rounded) form the held-out set.
pub fn generate_blur_dataset(
    count: usize,
    length_range: (f32, f32),
    test_fraction: f32,
    seed: u64,
) -> Result<(Vec<BlurKernel>, Vec<BlurKernel>)> {
    if count == 0 {
        return Err(Error::Range("dataset count must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::Range(format!("test fraction {test_fraction} outside [0, 1]")));
    }
    if length_range.0 > length_range.1
        || length_range.0 < LENGTH_LIMITS.0
        || length_range.1 > LENGTH_LIMITS.1
    {
        return Err(Error::Range(format!(
            "length range {length_range:?} outside [{}, {}]",
            LENGTH_LIMITS.0, LENGTH_LIMITS.1
        )));
    }
    let test_count = ((count as f64) * f64::from(test_fraction)).round() as usize;
    let mut kernels = Vec::with_capacity(count);
    for i in 0..count {
        let kseed = rng::derive_seed(seed, &["kernel", &i.to_string()]);
        let mut r = rng::seeded(rng::derive_seed(kseed, &["length"]));
        let length = r.gen_range(length_range.0..=length_range.1);
        let trajectory = random_trajectory(length, kseed)?;
        kernels.push(rasterize(&trajectory)?);
    }
    let train = kernels.split_off(test_count);
    Ok((train, kernels))
}

/// Forward model: `y = i (*) k + n`, `n ~ N(0, sigma^2 I)`. The returned
/// observation keeps the unclipped `y` for the solver and a `[0,1]`-clipped
/// copy for display.
pub fn simulate_observation(
    i_test: &Tensor,
    k: &BlurKernel,
    noise_sigma: f32,
    seed: u64,
) -> Result<Observation> {
    if noise_sigma < 0.0 {
        return Err(Error::Range(format!("noise sigma {noise_sigma} is negative")));
    }
    if i_test.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Range("image values must lie in [0, 1]".into()));
    }
    let (h, w, c) = i_test.image_dims()?;
    if KERNEL_CANVAS > h || KERNEL_CANVAS > w {
        return Err(Error::Shape(format!(
            "image {h}x{w} is smaller than the {KERNEL_CANVAS}x{KERNEL_CANVAS} kernel canvas"
        )));
    }
    let blurred = kernels::conv2d_full_fwd(
        i_test.data(),
        h,
        w,
        c,
        k.canvas.data(),
        KERNEL_CANVAS,
        KERNEL_CANVAS,
    );
    let mut r = rng::seeded(seed);
    let y_raw: Vec<f32> = blurred
        .iter()
        .map(|&v| {
            let n: f32 = StandardNormal.sample(&mut r);
            v + noise_sigma * n
        })
        .collect();
    let y_clipped: Vec<f32> = y_raw.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Ok(Observation {
        y_raw: Tensor::new(i_test.shape().to_vec(), y_raw)?,
        y_clipped: Tensor::new(i_test.shape().to_vec(), y_clipped)?,
        truth: Some(ObservationTruth {
            image: i_test.clone(),
            kernel: k.clone(),
            noise_sigma,
            seed,
        }),
    })
}

// ---------------------------------------------------------------------------
// Dataset container I/O (same file format as models)
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    format_version: u32,
    kind: String,
    canvas: [usize; 2],
    count: usize,
    entries: Vec<BlobEntry>,
}

pub fn save_kernel_dataset(path: &std::path::Path, kernels: &[BlurKernel]) -> Result<()> {
    let n = kernels.len();
    let canvas_len = KERNEL_CANVAS * KERNEL_CANVAS;
    let mut blob = Vec::with_capacity(n * canvas_len + n);
    for k in kernels {
        blob.extend_from_slice(k.canvas.data());
    }
    for k in kernels {
        blob.push(k.length);
    }
    let entries = vec![
        BlobEntry {
            name: "kernels".into(),
            shape: vec![n, KERNEL_CANVAS, KERNEL_CANVAS],
            byte_offset: 0,
            byte_len: (n * canvas_len * 4) as u64,
        },
        BlobEntry {
            name: "lengths".into(),
            shape: vec![n],
            byte_offset: (n * canvas_len * 4) as u64,
            byte_len: (n * 4) as u64,
        },
    ];
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        kind: "kernel-dataset".into(),
        canvas: [KERNEL_CANVAS, KERNEL_CANVAS],
        count: n,
        entries,
    };
    write_container(path, &manifest, &blob)
}

pub fn load_kernel_dataset(path: &std::path::Path) -> Result<Vec<BlurKernel>> {
    let (manifest, blob): (DatasetManifest, Vec<f32>) = read_container(path)?;
    if manifest.kind != "kernel-dataset" {
        return Err(Error::ModelFormat(format!(
            "{}: kind {:?} is not a kernel dataset",
            path.display(),
            manifest.kind
        )));
    }
    validate_entries(&manifest.entries, (blob.len() * 4) as u64, path)?;
    let canvas_len = KERNEL_CANVAS * KERNEL_CANVAS;
    let n = manifest.count;
    let mut kernels = Vec::with_capacity(n);
    for i in 0..n {
        let start = i * canvas_len;
        let canvas =
            Tensor::new(vec![KERNEL_CANVAS, KERNEL_CANVAS], blob[start..start + canvas_len].to_vec())?;
        let length = blob[n * canvas_len + i];
        kernels.push(BlurKernel::from_canvas(canvas, length)?);
    }
    Ok(kernels)
}
