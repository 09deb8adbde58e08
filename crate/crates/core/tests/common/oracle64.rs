//! Independent f64 re-implementations of every forward operation, used as
//! the finite-difference reference. Nothing here touches the library's
//! compute paths: plain loops, full double precision throughout, so central
//! differences measure the true derivative to far better than the test
//! tolerance.

#![allow(dead_code)]

use genblur::generators::{GeneratorModel, LayerSpec};

pub fn dense(x: &[f64], w: &[f64], b: &[f64], m: usize, n: usize) -> Vec<f64> {
    (0..m)
        .map(|i| b[i] + (0..n).map(|j| w[i * n + j] * x[j]).sum::<f64>())
        .collect()
}

/// Circular same-size convolution, kernel flipped, center (kh/2, kw/2) at
/// offset zero.
pub fn conv2d_full(
    img: &[f64],
    h: usize,
    w: usize,
    c: usize,
    ker: &[f64],
    kh: usize,
    kw: usize,
) -> Vec<f64> {
    let (ch0, cw0) = (kh / 2, kw / 2);
    let mut out = vec![0.0f64; h * w * c];
    for r in 0..h {
        for col in 0..w {
            for cc in 0..c {
                let mut acc = 0.0f64;
                for q0 in 0..kh {
                    for q1 in 0..kw {
                        let sr = (r + h + ch0 - q0 % h) % h;
                        let sc = (col + w + cw0 - q1 % w) % w;
                        acc += img[(sr * w + sc) * c + cc] * ker[q0 * kw + q1];
                    }
                }
                out[(r * w + col) * c + cc] = acc;
            }
        }
    }
    out
}

pub fn conv_valid(
    x: &[f64],
    h: usize,
    w: usize,
    ci: usize,
    wts: &[f64],
    co: usize,
    kh: usize,
    kw: usize,
    stride: usize,
) -> Vec<f64> {
    let ho = (h - kh) / stride + 1;
    let wo = (w - kw) / stride + 1;
    let mut y = vec![0.0f64; ho * wo * co];
    for oy in 0..ho {
        for ox in 0..wo {
            for f in 0..co {
                let mut acc = 0.0f64;
                for q0 in 0..kh {
                    for q1 in 0..kw {
                        for cc in 0..ci {
                            acc += x[((oy * stride + q0) * w + ox * stride + q1) * ci + cc]
                                * wts[((f * ci + cc) * kh + q0) * kw + q1];
                        }
                    }
                }
                y[(oy * wo + ox) * co + f] = acc;
            }
        }
    }
    y
}

pub fn conv_transpose(
    x: &[f64],
    h: usize,
    w: usize,
    co: usize,
    wts: &[f64],
    ci: usize,
    kh: usize,
    kw: usize,
    stride: usize,
) -> Vec<f64> {
    let ho = (h - 1) * stride + kh;
    let wo = (w - 1) * stride + kw;
    let mut y = vec![0.0f64; ho * wo * ci];
    for iy in 0..h {
        for ix in 0..w {
            for f in 0..co {
                let xv = x[(iy * w + ix) * co + f];
                for q0 in 0..kh {
                    for q1 in 0..kw {
                        for cc in 0..ci {
                            y[((iy * stride + q0) * wo + ix * stride + q1) * ci + cc] +=
                                xv * wts[((f * ci + cc) * kh + q0) * kw + q1];
                        }
                    }
                }
            }
        }
    }
    y
}

pub fn maxpool(x: &[f64], h: usize, w: usize, c: usize, size: usize, stride: usize) -> Vec<f64> {
    let ho = (h - size) / stride + 1;
    let wo = (w - size) / stride + 1;
    let mut y = vec![f64::NEG_INFINITY; ho * wo * c];
    for oy in 0..ho {
        for ox in 0..wo {
            for cc in 0..c {
                for q0 in 0..size {
                    for q1 in 0..size {
                        let v = x[((oy * stride + q0) * w + ox * stride + q1) * c + cc];
                        let slot = &mut y[(oy * wo + ox) * c + cc];
                        if v > *slot {
                            *slot = v;
                        }
                    }
                }
            }
        }
    }
    y
}

pub fn upsample_nn(x: &[f64], h: usize, w: usize, c: usize, factor: usize) -> Vec<f64> {
    let wo = w * factor;
    let mut y = vec![0.0f64; h * factor * wo * c];
    for oy in 0..h * factor {
        for ox in 0..wo {
            for cc in 0..c {
                y[(oy * wo + ox) * c + cc] = x[((oy / factor) * w + ox / factor) * c + cc];
            }
        }
    }
    y
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

pub fn sigmoid(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect()
}

pub fn exp(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.exp()).collect()
}

pub fn add_channel_bias(x: &[f64], b: &[f64], positions: usize, c: usize) -> Vec<f64> {
    let mut y = x.to_vec();
    for p in 0..positions {
        for cc in 0..c {
            y[p * c + cc] += b[cc];
        }
    }
    y
}

pub fn batchnorm_train(
    x: &[f64],
    positions: usize,
    c: usize,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Vec<f64> {
    let m = positions as f64;
    let mut mean = vec![0.0f64; c];
    for p in 0..positions {
        for cc in 0..c {
            mean[cc] += x[p * c + cc];
        }
    }
    for v in mean.iter_mut() {
        *v /= m;
    }
    let mut var = vec![0.0f64; c];
    for p in 0..positions {
        for cc in 0..c {
            var[cc] += (x[p * c + cc] - mean[cc]).powi(2);
        }
    }
    for v in var.iter_mut() {
        *v /= m;
    }
    let mut y = vec![0.0f64; positions * c];
    for p in 0..positions {
        for cc in 0..c {
            y[p * c + cc] =
                (x[p * c + cc] - mean[cc]) / (var[cc] + eps).sqrt() * gamma[cc] + beta[cc];
        }
    }
    y
}

pub fn batchnorm_infer(
    x: &[f64],
    positions: usize,
    c: usize,
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> Vec<f64> {
    let mut y = vec![0.0f64; positions * c];
    for p in 0..positions {
        for cc in 0..c {
            y[p * c + cc] =
                (x[p * c + cc] - mean[cc]) / (var[cc] + eps).sqrt() * gamma[cc] + beta[cc];
        }
    }
    y
}

pub fn tv_norm(x: &[f64], h: usize, w: usize, c: usize) -> f64 {
    let mut acc = 0.0f64;
    for r in 0..h {
        for col in 0..w {
            for cc in 0..c {
                let v = x[(r * w + col) * c + cc];
                if col + 1 < w {
                    acc += (x[(r * w + col + 1) * c + cc] - v).abs();
                }
                if r + 1 < h {
                    acc += (x[((r + 1) * w + col) * c + cc] - v).abs();
                }
            }
        }
    }
    acc
}

pub fn sum(x: &[f64]) -> f64 {
    x.iter().sum()
}

pub fn sum_sq(x: &[f64]) -> f64 {
    x.iter().map(|&v| v * v).sum()
}

pub fn to_f64(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| f64::from(v)).collect()
}

/// f64 forward pass through a decoder built from dense/relu/sigmoid/reshape
/// layers (the toy decoders used in composite-loss checks).
pub fn decode(model: &GeneratorModel, z: &[f64]) -> Vec<f64> {
    let mut x = z.to_vec();
    for (idx, layer) in model.layers().iter().enumerate() {
        x = match layer {
            LayerSpec::Dense { units } => {
                let w = to_f64(model.weights()[&format!("l{idx}.w")].data());
                let b = to_f64(model.weights()[&format!("l{idx}.b")].data());
                dense(&x, &w, &b, *units, x.len())
            }
            LayerSpec::Relu => relu(&x),
            LayerSpec::Sigmoid => sigmoid(&x),
            LayerSpec::Reshape { .. } => x,
            other => panic!("oracle decoder does not support {other:?}"),
        };
    }
    x
}

/// Eq.-style alternating-descent objective in f64:
/// `||y - G_I(z_i) (*) G_K(z_k)||^2 + gamma ||z_i||^2 + lambda ||z_k||^2`.
#[allow(clippy::too_many_arguments)]
pub fn dd_loss(
    y: &[f64],
    h: usize,
    w: usize,
    z_i: &[f64],
    z_k: &[f64],
    g_i: &GeneratorModel,
    g_k: &GeneratorModel,
    gamma: f64,
    lambda: f64,
) -> f64 {
    let image = decode(g_i, z_i);
    let kernel = decode(g_k, z_k);
    let ks = g_k.output_shape();
    let conv = conv2d_full(&image, h, w, 1, &kernel, ks[0], ks[1]);
    let meas: f64 = y.iter().zip(&conv).map(|(a, b)| (a - b).powi(2)).sum();
    meas + gamma * sum_sq(z_i) + lambda * sum_sq(z_k)
}

/// Slack objective in f64.
#[allow(clippy::too_many_arguments)]
pub fn dds_loss(
    y: &[f64],
    h: usize,
    w: usize,
    image: &[f64],
    z_i: &[f64],
    z_k: &[f64],
    g_i: &GeneratorModel,
    g_k: &GeneratorModel,
    tau: f64,
    zeta: f64,
    rho: f64,
) -> f64 {
    let range_image = decode(g_i, z_i);
    let kernel = decode(g_k, z_k);
    let ks = g_k.output_shape();
    let conv_free = conv2d_full(image, h, w, 1, &kernel, ks[0], ks[1]);
    let conv_range = conv2d_full(&range_image, h, w, 1, &kernel, ks[0], ks[1]);
    let data: f64 = y.iter().zip(&conv_free).map(|(a, b)| (a - b).powi(2)).sum();
    let range_err: f64 =
        image.iter().zip(&range_image).map(|(a, b)| (a - b).powi(2)).sum();
    let in_range: f64 = y.iter().zip(&conv_range).map(|(a, b)| (a - b).powi(2)).sum();
    data + tau * range_err + zeta * in_range + rho * tv_norm(image, h, w, 1)
}
