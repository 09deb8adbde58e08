//! Raw numeric routines behind the tape ops: forward passes and the matching
//! vector-Jacobian products. Everything here works on flat `f32` slices with
//! explicit dimensions; reductions accumulate in `f64`.

use rustfft::num_complex::Complex;
use rustfft::FftDirection;

use super::fft::{fft2d, to_complex, to_real_f32};

// ---------------------------------------------------------------------------
// Circular convolution (the forward blur model)
// ---------------------------------------------------------------------------

/// Embed a `kh x kw` kernel into an `h x w` canvas so that the kernel center
/// `(kh/2, kw/2)` lands at index (0, 0), wrapped circularly. With this layout
/// plain circular convolution with the padded kernel equals the "centered"
/// convolution the rest of the crate expects.
pub fn pad_kernel_centered(ker: &[f32], kh: usize, kw: usize, h: usize, w: usize) -> Vec<f64> {
    let (ch, cw) = (kh / 2, kw / 2);
    let mut padded = vec![0.0f64; h * w];
    for q0 in 0..kh {
        for q1 in 0..kw {
            let r = (q0 + h - ch) % h;
            let c = (q1 + w - cw) % w;
            padded[r * w + c] += f64::from(ker[q0 * kw + q1]);
        }
    }
    padded
}

/// FFT of the centered kernel embedding.
fn kernel_spectrum(ker: &[f32], kh: usize, kw: usize, h: usize, w: usize) -> Vec<Complex<f64>> {
    let padded = pad_kernel_centered(ker, kh, kw, h, w);
    let mut buf: Vec<Complex<f64>> = padded.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft2d(&mut buf, h, w, FftDirection::Forward);
    buf
}

/// Circular same-size convolution of each channel of `img` (`h x w x c`) with
/// `ker` (`kh x kw`), true convolution (kernel flipped), kernel center at
/// offset zero. FFT path.
pub fn conv2d_full_fwd(
    img: &[f32],
    h: usize,
    w: usize,
    c: usize,
    ker: &[f32],
    kh: usize,
    kw: usize,
) -> Vec<f32> {
    let kspec = kernel_spectrum(ker, kh, kw, h, w);
    let mut out = vec![0.0f32; h * w * c];
    for ch in 0..c {
        let plane: Vec<f32> = (0..h * w).map(|p| img[p * c + ch]).collect();
        let mut spec = to_complex(&plane);
        fft2d(&mut spec, h, w, FftDirection::Forward);
        for (s, k) in spec.iter_mut().zip(&kspec) {
            *s *= *k;
        }
        fft2d(&mut spec, h, w, FftDirection::Inverse);
        let plane_out = to_real_f32(&spec, h, w);
        for p in 0..h * w {
            out[p * c + ch] = plane_out[p];
        }
    }
    out
}

/// Gradient of the circular convolution w.r.t. the image: per-channel circular
/// correlation of the output gradient with the padded kernel.
pub fn conv2d_full_bwd_img(
    gout: &[f32],
    h: usize,
    w: usize,
    c: usize,
    ker: &[f32],
    kh: usize,
    kw: usize,
) -> Vec<f32> {
    let kspec = kernel_spectrum(ker, kh, kw, h, w);
    let mut gimg = vec![0.0f32; h * w * c];
    for ch in 0..c {
        let plane: Vec<f32> = (0..h * w).map(|p| gout[p * c + ch]).collect();
        let mut spec = to_complex(&plane);
        fft2d(&mut spec, h, w, FftDirection::Forward);
        for (s, k) in spec.iter_mut().zip(&kspec) {
            *s *= k.conj();
        }
        fft2d(&mut spec, h, w, FftDirection::Inverse);
        let plane_out = to_real_f32(&spec, h, w);
        for p in 0..h * w {
            gimg[p * c + ch] = plane_out[p];
        }
    }
    gimg
}

/// Gradient of the circular convolution w.r.t. the kernel: cross-correlation
/// of the image with the output gradient, summed over channels, read out at
/// the kernel tap offsets.
pub fn conv2d_full_bwd_ker(
    gout: &[f32],
    img: &[f32],
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
) -> Vec<f32> {
    let (ch0, cw0) = (kh / 2, kw / 2);
    // corr[t] = sum_p gout[p] * img[p + t]  (indices mod canvas)
    let mut corr = vec![0.0f64; h * w];
    for ch in 0..c {
        let img_plane: Vec<f32> = (0..h * w).map(|p| img[p * c + ch]).collect();
        let g_plane: Vec<f32> = (0..h * w).map(|p| gout[p * c + ch]).collect();
        let mut ispec = to_complex(&img_plane);
        let mut gspec = to_complex(&g_plane);
        fft2d(&mut ispec, h, w, FftDirection::Forward);
        fft2d(&mut gspec, h, w, FftDirection::Forward);
        for (i, g) in ispec.iter_mut().zip(&gspec) {
            *i *= g.conj();
        }
        fft2d(&mut ispec, h, w, FftDirection::Inverse);
        let scale = 1.0 / (h * w) as f64;
        for (acc, v) in corr.iter_mut().zip(&ispec) {
            *acc += v.re * scale;
        }
    }
    let mut gker = vec![0.0f32; kh * kw];
    for q0 in 0..kh {
        for q1 in 0..kw {
            let r = (ch0 + h - q0 % h) % h;
            let cc = (cw0 + w - q1 % w) % w;
            gker[q0 * kw + q1] = corr[r * w + cc] as f32;
        }
    }
    gker
}

// ---------------------------------------------------------------------------
// Dense layer
// ---------------------------------------------------------------------------

pub fn dense_fwd(x: &[f32], w: &[f32], b: &[f32], m: usize, n: usize) -> Vec<f32> {
    let mut y = vec![0.0f32; m];
    for i in 0..m {
        let row = &w[i * n..(i + 1) * n];
        let mut acc = f64::from(b[i]);
        for (wj, xj) in row.iter().zip(x) {
            acc += f64::from(*wj) * f64::from(*xj);
        }
        y[i] = acc as f32;
    }
    y
}

pub fn dense_bwd_x(g: &[f32], w: &[f32], m: usize, n: usize) -> Vec<f32> {
    let mut gx = vec![0.0f64; n];
    for i in 0..m {
        let gi = f64::from(g[i]);
        let row = &w[i * n..(i + 1) * n];
        for (slot, wj) in gx.iter_mut().zip(row) {
            *slot += gi * f64::from(*wj);
        }
    }
    gx.into_iter().map(|v| v as f32).collect()
}

pub fn dense_bwd_w(g: &[f32], x: &[f32], m: usize, n: usize) -> Vec<f32> {
    let mut gw = vec![0.0f32; m * n];
    for i in 0..m {
        let gi = g[i];
        for (j, xj) in x.iter().enumerate() {
            gw[i * n + j] = gi * xj;
        }
    }
    gw
}

// ---------------------------------------------------------------------------
// Valid convolution and its transpose
// ---------------------------------------------------------------------------

pub fn conv_out_dim(input: usize, k: usize, stride: usize) -> Option<usize> {
    if input < k || stride == 0 {
        None
    } else {
        Some((input - k) / stride + 1)
    }
}

pub fn convt_out_dim(input: usize, k: usize, stride: usize) -> usize {
    (input - 1) * stride + k
}

/// Valid-padding convolution. `x` is `[h, w, ci]`, filters `[co, ci, kh, kw]`.
pub fn conv_valid_fwd(
    x: &[f32],
    h: usize,
    w: usize,
    ci: usize,
    wts: &[f32],
    co: usize,
    kh: usize,
    kw: usize,
    stride: usize,
) -> Vec<f32> {
    let ho = conv_out_dim(h, kh, stride).expect("checked by caller");
    let wo = conv_out_dim(w, kw, stride).expect("checked by caller");
    let mut y = vec![0.0f32; ho * wo * co];
    for oy in 0..ho {
        for ox in 0..wo {
            for f in 0..co {
                let mut acc = 0.0f64;
                for q0 in 0..kh {
                    for q1 in 0..kw {
                        let iy = oy * stride + q0;
                        let ix = ox * stride + q1;
                        let xoff = (iy * w + ix) * ci;
                        for cc in 0..ci {
                            let wv = wts[((f * ci + cc) * kh + q0) * kw + q1];
                            acc += f64::from(x[xoff + cc]) * f64::from(wv);
                        }
                    }
                }
                y[(oy * wo + ox) * co + f] = acc as f32;
            }
        }
    }
    y
}

pub fn conv_valid_bwd_x(
    g: &[f32],
    h: usize,
    w: usize,
    ci: usize,
    wts: &[f32],
    co: usize,
    kh: usize,
    kw: usize,
    stride: usize,
) -> Vec<f32> {
    let ho = conv_out_dim(h, kh, stride).expect("checked by caller");
    let wo = conv_out_dim(w, kw, stride).expect("checked by caller");
    let mut gx = vec![0.0f32; h * w * ci];
    for oy in 0..ho {
        for ox in 0..wo {
            for f in 0..co {
                let gv = g[(oy * wo + ox) * co + f];
                if gv == 0.0 {
                    continue;
                }
                for q0 in 0..kh {
                    for q1 in 0..kw {
                        let iy = oy * stride + q0;
                        let ix = ox * stride + q1;
                        let xoff = (iy * w + ix) * ci;
                        for cc in 0..ci {
                            gx[xoff + cc] += gv * wts[((f * ci + cc) * kh + q0) * kw + q1];
                        }
                    }
                }
            }
        }
    }
    gx
}

pub fn conv_valid_bwd_w(
    g: &[f32],
    x: &[f32],
    h: usize,
    w: usize,
    ci: usize,
    co: usize,
    kh: usize,
    kw: usize,
    stride: usize,
) -> Vec<f32> {
    let ho = conv_out_dim(h, kh, stride).expect("checked by caller");
    let wo = conv_out_dim(w, kw, stride).expect("checked by caller");
    let mut gw = vec![0.0f64; co * ci * kh * kw];
    for oy in 0..ho {
        for ox in 0..wo {
            for f in 0..co {
                let gv = f64::from(g[(oy * wo + ox) * co + f]);
                if gv == 0.0 {
                    continue;
                }
                for q0 in 0..kh {
                    for q1 in 0..kw {
                        let iy = oy * stride + q0;
                        let ix = ox * stride + q1;
                        let xoff = (iy * w + ix) * ci;
                        for cc in 0..ci {
                            gw[((f * ci + cc) * kh + q0) * kw + q1] +=
                                gv * f64::from(x[xoff + cc]);
                        }
                    }
                }
            }
        }
    }
    gw.into_iter().map(|v| v as f32).collect()
}

/// Transposed convolution, the exact adjoint of [`conv_valid_fwd`] in its
/// spatial structure. `x` is `[h, w, co]`, filters `[co, ci, kh, kw]`, output
/// `[(h-1)*stride + kh, (w-1)*stride + kw, ci]`.
pub fn convt_fwd(
    x: &[f32],
    h: usize,
    w: usize,
    co: usize,
    wts: &[f32],
    ci: usize,
    kh: usize,
    kw: usize,
    stride: usize,
) -> Vec<f32> {
    let ho = convt_out_dim(h, kh, stride);
    let wo = convt_out_dim(w, kw, stride);
    let mut y = vec![0.0f32; ho * wo * ci];
    for iy in 0..h {
        for ix in 0..w {
            for f in 0..co {
                let xv = x[(iy * w + ix) * co + f];
                if xv == 0.0 {
                    continue;
                }
                for q0 in 0..kh {
                    for q1 in 0..kw {
                        let oy = iy * stride + q0;
                        let ox = ix * stride + q1;
                        let yoff = (oy * wo + ox) * ci;
                        for cc in 0..ci {
                            y[yoff + cc] += xv * wts[((f * ci + cc) * kh + q0) * kw + q1];
                        }
                    }
                }
            }
        }
    }
    y
}

pub fn convt_bwd_x(
    g: &[f32],
    h: usize,
    w: usize,
    co: usize,
    wts: &[f32],
    ci: usize,
    kh: usize,
    kw: usize,
    stride: usize,
) -> Vec<f32> {
    let wo = convt_out_dim(w, kw, stride);
    let mut gx = vec![0.0f32; h * w * co];
    for iy in 0..h {
        for ix in 0..w {
            for f in 0..co {
                let mut acc = 0.0f64;
                for q0 in 0..kh {
                    for q1 in 0..kw {
                        let oy = iy * stride + q0;
                        let ox = ix * stride + q1;
                        let goff = (oy * wo + ox) * ci;
                        for cc in 0..ci {
                            acc += f64::from(g[goff + cc])
                                * f64::from(wts[((f * ci + cc) * kh + q0) * kw + q1]);
                        }
                    }
                }
                gx[(iy * w + ix) * co + f] = acc as f32;
            }
        }
    }
    gx
}

pub fn convt_bwd_w(
    g: &[f32],
    x: &[f32],
    h: usize,
    w: usize,
    co: usize,
    ci: usize,
    kh: usize,
    kw: usize,
    stride: usize,
) -> Vec<f32> {
    let wo = convt_out_dim(w, kw, stride);
    let mut gw = vec![0.0f64; co * ci * kh * kw];
    for iy in 0..h {
        for ix in 0..w {
            for f in 0..co {
                let xv = f64::from(x[(iy * w + ix) * co + f]);
                if xv == 0.0 {
                    continue;
                }
                for q0 in 0..kh {
                    for q1 in 0..kw {
                        let oy = iy * stride + q0;
                        let ox = ix * stride + q1;
                        let goff = (oy * wo + ox) * ci;
                        for cc in 0..ci {
                            gw[((f * ci + cc) * kh + q0) * kw + q1] +=
                                xv * f64::from(g[goff + cc]);
                        }
                    }
                }
            }
        }
    }
    gw.into_iter().map(|v| v as f32).collect()
}

// ---------------------------------------------------------------------------
// Pooling, upsampling
// ---------------------------------------------------------------------------

/// Max pooling with argmax capture; ties resolve to the first index in
/// row-major order, which keeps gradients deterministic.
pub fn maxpool_fwd(
    x: &[f32],
    h: usize,
    w: usize,
    c: usize,
    size: usize,
    stride: usize,
) -> (Vec<f32>, Vec<usize>, usize, usize) {
    let ho = conv_out_dim(h, size, stride).expect("checked by caller");
    let wo = conv_out_dim(w, size, stride).expect("checked by caller");
    let mut y = vec![0.0f32; ho * wo * c];
    let mut argmax = vec![0usize; ho * wo * c];
    for oy in 0..ho {
        for ox in 0..wo {
            for cc in 0..c {
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = 0usize;
                for q0 in 0..size {
                    for q1 in 0..size {
                        let iy = oy * stride + q0;
                        let ix = ox * stride + q1;
                        let idx = (iy * w + ix) * c + cc;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (oy * wo + ox) * c + cc;
                y[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    (y, argmax, ho, wo)
}

pub fn upsample_nn_fwd(x: &[f32], h: usize, w: usize, c: usize, factor: usize) -> Vec<f32> {
    let (ho, wo) = (h * factor, w * factor);
    let mut y = vec![0.0f32; ho * wo * c];
    for oy in 0..ho {
        for ox in 0..wo {
            let src = ((oy / factor) * w + ox / factor) * c;
            let dst = (oy * wo + ox) * c;
            y[dst..dst + c].copy_from_slice(&x[src..src + c]);
        }
    }
    y
}

pub fn upsample_nn_bwd(g: &[f32], h: usize, w: usize, c: usize, factor: usize) -> Vec<f32> {
    let wo = w * factor;
    let mut gx = vec![0.0f32; h * w * c];
    for oy in 0..h * factor {
        for ox in 0..wo {
            let src = ((oy / factor) * w + ox / factor) * c;
            let dst = (oy * wo + ox) * c;
            for cc in 0..c {
                gx[src + cc] += g[dst + cc];
            }
        }
    }
    gx
}

// ---------------------------------------------------------------------------
// Total variation
// ---------------------------------------------------------------------------

/// Anisotropic TV: sum of absolute forward differences in both directions,
/// no wrap-around.
pub fn tv_norm_fwd(x: &[f32], h: usize, w: usize, c: usize) -> f32 {
    tv_norm_fwd64(x, h, w, c) as f32
}

pub fn tv_norm_fwd64(x: &[f32], h: usize, w: usize, c: usize) -> f64 {
    let mut acc = 0.0f64;
    for r in 0..h {
        for col in 0..w {
            for cc in 0..c {
                let v = x[(r * w + col) * c + cc];
                if col + 1 < w {
                    acc += f64::from((x[(r * w + col + 1) * c + cc] - v).abs());
                }
                if r + 1 < h {
                    acc += f64::from((x[((r + 1) * w + col) * c + cc] - v).abs());
                }
            }
        }
    }
    acc
}

/// Subgradient of the anisotropic TV; zero where a difference is exactly zero.
pub fn tv_norm_bwd(g: f32, x: &[f32], h: usize, w: usize, c: usize) -> Vec<f32> {
    let mut gx = vec![0.0f32; h * w * c];
    for r in 0..h {
        for col in 0..w {
            for cc in 0..c {
                let here = (r * w + col) * c + cc;
                if col + 1 < w {
                    let right = (r * w + col + 1) * c + cc;
                    let d = x[right] - x[here];
                    let s = if d > 0.0 {
                        g
                    } else if d < 0.0 {
                        -g
                    } else {
                        0.0
                    };
                    gx[right] += s;
                    gx[here] -= s;
                }
                if r + 1 < h {
                    let down = ((r + 1) * w + col) * c + cc;
                    let d = x[down] - x[here];
                    let s = if d > 0.0 {
                        g
                    } else if d < 0.0 {
                        -g
                    } else {
                        0.0
                    };
                    gx[down] += s;
                    gx[here] -= s;
                }
            }
        }
    }
    gx
}

// ---------------------------------------------------------------------------
// Batch normalization (statistics over all positions of one instance,
// per channel; the training loop maintains running statistics across steps)
// ---------------------------------------------------------------------------

pub const BATCHNORM_EPS: f64 = 1e-5;

pub struct BatchNormStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub invstd: Vec<f64>,
}

pub fn batchnorm_train_fwd(
    x: &[f32],
    positions: usize,
    c: usize,
    gamma: &[f32],
    beta: &[f32],
) -> (Vec<f32>, BatchNormStats) {
    let mut mean = vec![0.0f64; c];
    for p in 0..positions {
        for cc in 0..c {
            mean[cc] += f64::from(x[p * c + cc]);
        }
    }
    for m in mean.iter_mut() {
        *m /= positions as f64;
    }
    let mut var = vec![0.0f64; c];
    for p in 0..positions {
        for cc in 0..c {
            let d = f64::from(x[p * c + cc]) - mean[cc];
            var[cc] += d * d;
        }
    }
    for v in var.iter_mut() {
        *v /= positions as f64;
    }
    let invstd: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BATCHNORM_EPS).sqrt()).collect();
    let mut y = vec![0.0f32; positions * c];
    for p in 0..positions {
        for cc in 0..c {
            let xhat = (f64::from(x[p * c + cc]) - mean[cc]) * invstd[cc];
            y[p * c + cc] = (xhat * f64::from(gamma[cc]) + f64::from(beta[cc])) as f32;
        }
    }
    let stats = BatchNormStats {
        mean: mean.iter().map(|&m| m as f32).collect(),
        var: var.iter().map(|&v| v as f32).collect(),
        invstd,
    };
    (y, stats)
}

/// Backward through training-mode batchnorm. Returns (gx, ggamma, gbeta).
pub fn batchnorm_train_bwd(
    g: &[f32],
    x: &[f32],
    positions: usize,
    c: usize,
    gamma: &[f32],
    stats: &BatchNormStats,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let m = positions as f64;
    let mut gbeta = vec![0.0f64; c];
    let mut ggamma = vec![0.0f64; c];
    for p in 0..positions {
        for cc in 0..c {
            let gi = f64::from(g[p * c + cc]);
            let xhat = (f64::from(x[p * c + cc]) - f64::from(stats.mean[cc])) * stats.invstd[cc];
            gbeta[cc] += gi;
            ggamma[cc] += gi * xhat;
        }
    }
    let mut gx = vec![0.0f32; positions * c];
    for p in 0..positions {
        for cc in 0..c {
            let gi = f64::from(g[p * c + cc]);
            let xhat = (f64::from(x[p * c + cc]) - f64::from(stats.mean[cc])) * stats.invstd[cc];
            let v = f64::from(gamma[cc]) * stats.invstd[cc]
                * (gi - gbeta[cc] / m - xhat * ggamma[cc] / m);
            gx[p * c + cc] = v as f32;
        }
    }
    (
        gx,
        ggamma.into_iter().map(|v| v as f32).collect(),
        gbeta.into_iter().map(|v| v as f32).collect(),
    )
}

/// Inference-mode batchnorm: a fixed per-channel affine map using stored
/// running statistics.
pub fn batchnorm_infer_fwd(
    x: &[f32],
    positions: usize,
    c: usize,
    gamma: &[f32],
    beta: &[f32],
    running_mean: &[f32],
    running_var: &[f32],
) -> Vec<f32> {
    let mut y = vec![0.0f32; positions * c];
    for p in 0..positions {
        for cc in 0..c {
            let invstd = 1.0 / (f64::from(running_var[cc]) + BATCHNORM_EPS).sqrt();
            let xhat = (f64::from(x[p * c + cc]) - f64::from(running_mean[cc])) * invstd;
            y[p * c + cc] = (xhat * f64::from(gamma[cc]) + f64::from(beta[cc])) as f32;
        }
    }
    y
}

pub fn batchnorm_infer_bwd(
    g: &[f32],
    positions: usize,
    c: usize,
    gamma: &[f32],
    running_var: &[f32],
) -> Vec<f32> {
    let mut gx = vec![0.0f32; positions * c];
    for p in 0..positions {
        for cc in 0..c {
            let invstd = 1.0 / (f64::from(running_var[cc]) + BATCHNORM_EPS).sqrt();
            gx[p * c + cc] = (f64::from(g[p * c + cc]) * f64::from(gamma[cc]) * invstd) as f32;
        }
    }
    gx
}
