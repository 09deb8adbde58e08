//! Shared oracles for the integration suites. Everything here is written
//! independently of the library's computation paths: direct triple loops,
//! central finite differences, and exhaustive search.

#![allow(dead_code)]

pub mod oracle64;

use std::collections::BTreeMap;

use genblur::diffcore::{Tape, Tensor, TensorRef};
use genblur::generators::{GeneratorModel, LayerSpec};
use genblur::rng;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian_vec(dim: usize, seed: u64) -> Vec<f32> {
    let mut r = rng::seeded(seed);
    (0..dim).map(|_| StandardNormal.sample(&mut r)).collect()
}

pub fn gaussian_tensor(shape: Vec<usize>, seed: u64) -> Tensor {
    let numel = shape.iter().product();
    Tensor::new(shape, gaussian_vec(numel, seed)).expect("sized")
}

pub fn uniform_tensor(shape: Vec<usize>, lo: f32, hi: f32, seed: u64) -> Tensor {
    let mut r = rng::seeded(seed);
    let numel: usize = shape.iter().product();
    Tensor::new(shape, (0..numel).map(|_| r.gen_range(lo..hi)).collect()).expect("sized")
}

/// Direct triple-loop circular convolution in f64: the reference the FFT path
/// must match. Kernel center (kh/2, kw/2) maps to offset zero; the kernel is
/// flipped (true convolution).
pub fn conv2d_direct(img: &Tensor, ker: &Tensor) -> Vec<f32> {
    let (h, w, c) = img.image_dims().expect("image tensor");
    let (kh, kw) = (ker.shape()[0], ker.shape()[1]);
    let (ch0, cw0) = (kh / 2, kw / 2);
    let mut out = vec![0.0f32; h * w * c];
    for r in 0..h {
        for col in 0..w {
            for cc in 0..c {
                let mut acc = 0.0f64;
                for q0 in 0..kh {
                    for q1 in 0..kw {
                        // out[p] = sum_q img[p - (q - center)] * ker[q]
                        let sr = (r + h + ch0 - q0 % h + h) % h;
                        let sc = (col + w + cw0 - q1 % w + w) % w;
                        acc += f64::from(img.data()[(sr * w + sc) * c + cc])
                            * f64::from(ker.data()[q0 * kw + q1]);
                    }
                }
                out[(r * w + col) * c + cc] = acc as f32;
            }
        }
    }
    out
}

/// Central finite differences of an f64 loss functional w.r.t. one input
/// slot, step `h`. Perturbations and evaluation run entirely in f64 via the
/// independent oracle implementations, so the quotient measures the true
/// derivative to well below the test tolerance.
pub fn finite_difference(
    f: &dyn Fn(&[Vec<f64>]) -> f64,
    inputs: &[Vec<f32>],
    slot: usize,
    h: f64,
) -> Vec<f32> {
    let mut work: Vec<Vec<f64>> = inputs.iter().map(|v| oracle64::to_f64(v)).collect();
    let mut grad = vec![0.0f32; inputs[slot].len()];
    for i in 0..grad.len() {
        let orig = work[slot][i];
        work[slot][i] = orig + h;
        let plus = f(&work);
        work[slot][i] = orig - h;
        let minus = f(&work);
        work[slot][i] = orig;
        grad[i] = ((plus - minus) / (2.0 * h)) as f32;
    }
    grad
}

/// Gradient check at relative error < `tol`, floored at the f32 storage
/// scale: `|a - n| <= tol * max(|a|, |n|, 0.01)`. The engine's analytic
/// gradients are themselves f32-rounded, so coordinates far below 0.01 carry
/// no comparable digits.
pub fn assert_gradients_close(analytic: &[f32], numeric: &[f32], tol: f32, what: &str) {
    assert_eq!(analytic.len(), numeric.len(), "{what}: gradient length");
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let denom = a.abs().max(n.abs()).max(0.01);
        let rel = (a - n).abs() / denom;
        assert!(
            rel < tol,
            "{what}: coordinate {i}: analytic {a}, finite-difference {n}, rel err {rel}"
        );
    }
}

/// A tiny fixed decoder for solver tests: dense -> sigmoid -> reshape.
/// `channel` appends a channel dimension (image decoders).
pub fn toy_decoder(latent: usize, side: usize, channel: bool, seed: u64) -> GeneratorModel {
    let units = side * side;
    let mut shape = vec![side, side];
    if channel {
        shape.push(1);
    }
    let layers =
        vec![LayerSpec::Dense { units }, LayerSpec::Sigmoid, LayerSpec::Reshape { shape }];
    GeneratorModel::init(latent, layers, seed).expect("valid toy decoder")
}

/// Two-layer toy decoder (dense-relu-dense-sigmoid) for composite-loss
/// gradient checks.
pub fn toy_decoder_two_layer(latent: usize, side: usize, channel: bool, seed: u64) -> GeneratorModel {
    let units = side * side;
    let mut shape = vec![side, side];
    if channel {
        shape.push(1);
    }
    let layers = vec![
        LayerSpec::Dense { units: 12 },
        LayerSpec::Relu,
        LayerSpec::Dense { units },
        LayerSpec::Sigmoid,
        LayerSpec::Reshape { shape },
    ];
    GeneratorModel::init(latent, layers, seed).expect("valid toy decoder")
}

/// Exhaustive grid search of the measurement loss over both latent planes.
///
/// Decodes every grid point of each latent square `[lo, hi]^2` once, then
/// scans all pairs with a direct circular convolution. Returns the minimum
/// measurement loss found. Written as a plain double loop so it shares
/// nothing with the solver path.
pub fn grid_search_min_measurement(
    y: &Tensor,
    g_i: &GeneratorModel,
    g_k: &GeneratorModel,
    lo: f32,
    hi: f32,
    resolution: f32,
) -> f64 {
    assert_eq!(g_i.latent_dim(), 2, "grid oracle is for latent-dim-2 decoders");
    assert_eq!(g_k.latent_dim(), 2, "grid oracle is for latent-dim-2 decoders");
    let steps = ((hi - lo) / resolution).round() as usize + 1;
    let coord = |j: usize| lo + resolution * j as f32;

    let (h, w, c) = y.image_dims().expect("image");
    assert_eq!(c, 1, "grid oracle uses single-channel images");
    let y_data = y.data();

    // Pre-decode every grid point of both planes.
    let mut images: Vec<Vec<f32>> = Vec::with_capacity(steps * steps);
    for a in 0..steps {
        for b in 0..steps {
            let z = Tensor::from_vec(vec![coord(a), coord(b)]);
            images.push(g_i.decode(&z).expect("decode").into_data());
        }
    }
    let mut kernels: Vec<Vec<f32>> = Vec::with_capacity(steps * steps);
    let kshape = g_k.output_shape().to_vec();
    let (kh, kw) = (kshape[0], kshape[1]);
    for a in 0..steps {
        for b in 0..steps {
            let z = Tensor::from_vec(vec![coord(a), coord(b)]);
            kernels.push(g_k.decode(&z).expect("decode").into_data());
        }
    }

    let (ch0, cw0) = (kh / 2, kw / 2);
    let chunk = (images.len() / rayon_threads().max(1)).max(1);
    let best = std::sync::Mutex::new(f64::INFINITY);
    std::thread::scope(|scope| {
        for img_chunk in images.chunks(chunk) {
            let kernels = &kernels;
            let best = &best;
            scope.spawn(move || {
                let mut local = f64::INFINITY;
                let mut conv = vec![0.0f64; h * w];
                for img in img_chunk {
                    for ker in kernels {
                        for slot in conv.iter_mut() {
                            *slot = 0.0;
                        }
                        for q0 in 0..kh {
                            for q1 in 0..kw {
                                let kv = f64::from(ker[q0 * kw + q1]);
                                if kv == 0.0 {
                                    continue;
                                }
                                for r in 0..h {
                                    let sr = (r + h + ch0 - q0 % h) % h;
                                    for col in 0..w {
                                        let sc = (col + w + cw0 - q1 % w) % w;
                                        conv[r * w + col] += kv * f64::from(img[sr * w + sc]);
                                    }
                                }
                            }
                        }
                        let mut loss = 0.0f64;
                        for (p, cv) in conv.iter().enumerate() {
                            let d = f64::from(y_data[p]) - cv;
                            loss += d * d;
                        }
                        if loss < local {
                            local = loss;
                        }
                    }
                }
                let mut guard = best.lock().expect("lock");
                if local < *guard {
                    *guard = local;
                }
            });
        }
    });
    let value = *best.lock().expect("lock");
    value
}

fn rayon_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Build a fixed toy generator pair where decodes stay gentle: weights are
/// scaled-down Glorot so the measurement landscape is smooth enough for the
/// grid-vs-descent comparison.
pub fn grid_toy_pair(seed: u64) -> (GeneratorModel, GeneratorModel) {
    let g_i = scaled_toy_decoder(2, 3, true, seed, 0.8);
    let g_k = scaled_toy_decoder(2, 2, false, seed + 1, 0.8);
    (g_i, g_k)
}

fn scaled_toy_decoder(
    latent: usize,
    side: usize,
    channel: bool,
    seed: u64,
    scale: f32,
) -> GeneratorModel {
    let base = toy_decoder(latent, side, channel, seed);
    let mut weights: BTreeMap<String, Tensor> = base.weights().clone();
    for t in weights.values_mut() {
        for v in t.data_mut() {
            *v *= scale;
        }
    }
    GeneratorModel::new(latent, base.layers().to_vec(), weights).expect("valid decoder")
}

/// SSIM by the book: per-window direct sums of the weighted statistics with
/// the definition `sigma^2 = E[(x - mu)^2]` rather than the filtering
/// identity used by the library.
pub fn ssim_direct(a: &Tensor, b: &Tensor) -> f64 {
    let (h, w, c) = a.image_dims().expect("image");
    assert_eq!(c, 1, "direct SSIM oracle is single-channel");
    const WIN: usize = 11;
    const SIGMA: f64 = 1.5;
    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);

    let mut window = [[0.0f64; WIN]; WIN];
    let mut total = 0.0;
    for (r, row) in window.iter_mut().enumerate() {
        for (col, slot) in row.iter_mut().enumerate() {
            let dr = r as f64 - 5.0;
            let dc = col as f64 - 5.0;
            *slot = (-(dr * dr + dc * dc) / (2.0 * SIGMA * SIGMA)).exp();
            total += *slot;
        }
    }
    for row in window.iter_mut() {
        for slot in row.iter_mut() {
            *slot /= total;
        }
    }

    let mut acc = 0.0f64;
    let mut count = 0usize;
    for r0 in 0..=h - WIN {
        for c0 in 0..=w - WIN {
            let (mut mu_a, mut mu_b) = (0.0f64, 0.0f64);
            for r in 0..WIN {
                for col in 0..WIN {
                    mu_a += window[r][col] * f64::from(a.data()[(r0 + r) * w + c0 + col]);
                    mu_b += window[r][col] * f64::from(b.data()[(r0 + r) * w + c0 + col]);
                }
            }
            let (mut var_a, mut var_b, mut cov) = (0.0f64, 0.0f64, 0.0f64);
            for r in 0..WIN {
                for col in 0..WIN {
                    let da = f64::from(a.data()[(r0 + r) * w + c0 + col]) - mu_a;
                    let db = f64::from(b.data()[(r0 + r) * w + c0 + col]) - mu_b;
                    var_a += window[r][col] * da * da;
                    var_b += window[r][col] * db * db;
                    cov += window[r][col] * da * db;
                }
            }
            acc += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            count += 1;
        }
    }
    acc / count as f64
}

/// Helper: run a tape forward from plain vectors through a closure and
/// return both the loss value and the gradient of the requested leaf.
pub fn tape_loss_and_grad(
    inputs: &[Vec<f32>],
    shapes: &[Vec<usize>],
    grad_slot: usize,
    build: &dyn Fn(&mut Tape, &[TensorRef]) -> TensorRef,
) -> (f32, Vec<f32>) {
    let mut tape = Tape::new();
    let refs: Vec<TensorRef> = inputs
        .iter()
        .zip(shapes)
        .enumerate()
        .map(|(slot, (data, shape))| {
            let t = Tensor::new(shape.clone(), data.clone()).expect("sized");
            tape.leaf(if slot == grad_slot { t.with_grad() } else { t })
        })
        .collect();
    let loss = build(&mut tape, &refs);
    let value = tape.value(loss).item().expect("scalar loss");
    tape.backward(loss).expect("backward");
    let grad = tape.grad(refs[grad_slot]).expect("leaf grad").to_vec();
    (value, grad)
}

/// Plain-vector forward evaluation for the finite-difference side, at the
/// reduction chain's full f64 precision.
pub fn tape_loss_value(
    inputs: &[Vec<f32>],
    shapes: &[Vec<usize>],
    build: &dyn Fn(&mut Tape, &[TensorRef]) -> TensorRef,
) -> f64 {
    let mut tape = Tape::new();
    let refs: Vec<TensorRef> = inputs
        .iter()
        .zip(shapes)
        .map(|(data, shape)| {
            tape.leaf(Tensor::new(shape.clone(), data.clone()).expect("sized"))
        })
        .collect();
    let loss = build(&mut tape, &refs);
    tape.value_f64(loss)
}
