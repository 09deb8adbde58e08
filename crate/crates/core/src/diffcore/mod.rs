//! Deterministic tensor engine with reverse-mode automatic differentiation,
//! restricted to the operator set the decoders and losses in this crate need.
//!
//! Storage is 32-bit; reductions and the FFT path accumulate in 64-bit.

mod fft;
pub mod kernels;
mod tape;
mod tensor;

pub use tape::{BatchNormSnapshot, Tape, TensorRef};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(shape: Vec<usize>, data: Vec<f32>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    /// Direct triple-loop circular convolution, f64 accumulation. Lives here
    /// (and in the integration oracles) as the reference the FFT path must
    /// reproduce.
    fn conv2d_direct(img: &Tensor, ker: &Tensor) -> Vec<f32> {
        let (h, w, c) = img.image_dims().unwrap();
        let (kh, kw) = (ker.shape()[0], ker.shape()[1]);
        let (ch0, cw0) = (kh / 2, kw / 2);
        let mut out = vec![0.0f32; h * w * c];
        for r in 0..h {
            for col in 0..w {
                for cc in 0..c {
                    let mut acc = 0.0f64;
                    for q0 in 0..kh {
                        for q1 in 0..kw {
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

    #[test]
    fn conv2d_identity_kernel() {
        let mut tape = Tape::new();
        let img = tape.leaf(tensor(vec![3, 4, 1], (0..12).map(|v| v as f32).collect()));
        let ker = tape.leaf(tensor(vec![1, 1], vec![1.0]));
        let out = tape.conv2d_full(img, ker).unwrap();
        for (a, b) in tape.value(out).data().iter().zip(tape.value(img).data()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn conv2d_delta_kernel_is_identity() {
        let mut tape = Tape::new();
        let img = tape.leaf(tensor(vec![4, 4], (0..16).map(|v| v as f32 * 0.1).collect()));
        let mut delta = vec![0.0f32; 9];
        delta[4] = 1.0; // center of a 3x3 kernel
        let ker = tape.leaf(tensor(vec![3, 3], delta));
        let out = tape.conv2d_full(img, ker).unwrap();
        for (a, b) in tape.value(out).data().iter().zip(tape.value(img).data()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn conv2d_uniform_kernel_matches_direct_loop() {
        let img = tensor(vec![4, 4], (0..16).map(|v| v as f32).collect());
        let ker = tensor(vec![3, 3], vec![1.0 / 9.0; 9]);
        let expect = conv2d_direct(&img, &ker);
        let mut tape = Tape::new();
        let (i, k) = (tape.leaf(img), tape.leaf(ker));
        let out = tape.conv2d_full(i, k).unwrap();
        for (a, b) in tape.value(out).data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn conv2d_sum_one_kernel_preserves_constant_image() {
        let img = tensor(vec![5, 7], vec![0.37; 35]);
        let mut kdata = vec![0.1, 0.25, 0.3, 0.15, 0.2, 0.0];
        let s: f32 = kdata.iter().sum();
        for v in kdata.iter_mut() {
            *v /= s;
        }
        let ker = tensor(vec![2, 3], kdata);
        let mut tape = Tape::new();
        let (i, k) = (tape.leaf(img), tape.leaf(ker));
        let out = tape.conv2d_full(i, k).unwrap();
        for v in tape.value(out).data() {
            assert!((v - 0.37).abs() < 1e-6);
        }
    }

    #[test]
    fn conv2d_rejects_oversized_kernel_and_nan() {
        let mut tape = Tape::new();
        let img = tape.leaf(tensor(vec![2, 2], vec![0.0; 4]));
        let ker = tape.leaf(tensor(vec![3, 3], vec![0.0; 9]));
        assert!(tape.conv2d_full(img, ker).is_err());

        let mut tape = Tape::new();
        let img = tape.leaf(tensor(vec![2, 2], vec![0.0, f32::NAN, 0.0, 0.0]));
        let ker = tape.leaf(tensor(vec![1, 1], vec![1.0]));
        assert!(matches!(
            tape.conv2d_full(img, ker),
            Err(crate::error::Error::Numeric(_))
        ));
    }

    #[test]
    fn dense_identity_and_arithmetic() {
        let mut tape = Tape::new();
        let x = tape.leaf(tensor(vec![2], vec![3.0, -1.5]));
        let w = tape.leaf(tensor(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let b = tape.leaf(tensor(vec![2], vec![0.0, 0.0]));
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, -1.5]);

        let mut tape = Tape::new();
        let x = tape.leaf(tensor(vec![2], vec![1.0, 2.0]));
        let w = tape.leaf(tensor(vec![2, 2], vec![1.0, 1.0, 0.0, 1.0]));
        let b = tape.leaf(tensor(vec![2], vec![1.0, 0.0]));
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0, 2.0]);
    }

    #[test]
    fn conv_valid_local_sums() {
        let mut tape = Tape::new();
        let x = tape.leaf(tensor(vec![3, 3, 1], (1..=9).map(|v| v as f32).collect()));
        let w = tape.leaf(tensor(vec![1, 1, 2, 2], vec![1.0; 4]));
        let y = tape.conv_valid(x, w, 1).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 2, 1]);
        assert_eq!(tape.value(y).data(), &[12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn convt_shape_rule() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![12, 12, 1]));
        let w = tape.leaf(Tensor::zeros(vec![1, 1, 2, 2]));
        let y = tape.conv_transpose(x, w, 1).unwrap();
        assert_eq!(tape.value(y).shape(), &[13, 13, 1]);
    }

    #[test]
    fn conv_and_convt_are_adjoint() {
        use rand::Rng;
        let mut rng = crate::rng::seeded(7);
        // Geometries with (dim - k) divisible by the stride, so conv and
        // convT are exact adjoints of each other.
        for &(h, w, ci, co, k, s) in
            &[(6usize, 5usize, 2usize, 3usize, 2usize, 1usize), (9, 9, 1, 2, 3, 2), (8, 10, 3, 1, 2, 2)]
        {
            let ho = (h - k) / s + 1;
            let wo = (w - k) / s + 1;
            let x = tensor(vec![h, w, ci], (0..h * w * ci).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let wt =
                tensor(vec![co, ci, k, k], (0..co * ci * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let y = tensor(vec![ho, wo, co], (0..ho * wo * co).map(|_| rng.gen_range(-1.0..1.0)).collect());

            let mut tape = Tape::new();
            let (xr, wr) = (tape.leaf(x.clone()), tape.leaf(wt.clone()));
            let cx = tape.conv_valid(xr, wr, s).unwrap();
            let lhs: f64 = tape
                .value(cx)
                .data()
                .iter()
                .zip(y.data())
                .map(|(a, b)| f64::from(*a) * f64::from(*b))
                .sum();

            let mut tape = Tape::new();
            let (yr, wr) = (tape.leaf(y), tape.leaf(wt));
            let ty = tape.conv_transpose(yr, wr, s).unwrap();
            let rhs: f64 = tape
                .value(ty)
                .data()
                .iter()
                .zip(x.data())
                .map(|(a, b)| f64::from(*a) * f64::from(*b))
                .sum();

            assert!((lhs - rhs).abs() < 1e-5, "adjoint identity violated: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn relu_sigmoid_maxpool_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(tensor(vec![2], vec![-1.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 2.0]);

        let mut tape = Tape::new();
        let x = tape.leaf(tensor(vec![2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]));
        let y = tape.maxpool(x, 2, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0]);

        let mut tape = Tape::new();
        let x = tape.leaf(tensor(vec![1], vec![0.0]));
        let y = tape.sigmoid(x);
        assert_eq!(tape.value(y).data(), &[0.5]);
    }

    #[test]
    fn maxpool_tie_routes_to_first_index() {
        let mut tape = Tape::new();
        let x = tape.leaf(tensor(vec![2, 2, 1], vec![5.0, 5.0, 5.0, 5.0]).with_grad());
        let y = tape.maxpool(x, 2, 2).unwrap();
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn tv_norm_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(tensor(vec![2, 2], vec![0.3; 4]));
        let y = tape.tv_norm(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0]);

        let mut tape = Tape::new();
        let x = tape.leaf(tensor(vec![2, 2], vec![0.0, 1.0, 0.0, 1.0]));
        let y = tape.tv_norm(x).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0]);
    }

    #[test]
    fn backward_sum_sq_gradient() {
        let mut tape = Tape::new();
        let z = tape.leaf(tensor(vec![2], vec![3.0, 4.0]).with_grad());
        let loss = tape.sum_sq(z);
        assert_eq!(tape.value(loss).data(), &[25.0]);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(z).unwrap(), &[6.0, 8.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let z = tape.leaf(tensor(vec![2], vec![1.0, 2.0]).with_grad());
        assert!(tape.backward(z).is_err());
    }

    #[test]
    fn unreached_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(tensor(vec![2], vec![1.0, 2.0]).with_grad());
        let b = tape.leaf(tensor(vec![3], vec![1.0, 2.0, 3.0]).with_grad());
        let loss = tape.sum_sq(a);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(b).unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn upsample_nn_repeats_blocks() {
        let mut tape = Tape::new();
        let x = tape.leaf(tensor(vec![1, 2, 1], vec![1.0, 2.0]));
        let y = tape.upsample_nn(x, 2).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 4, 1]);
        assert_eq!(tape.value(y).data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn batchnorm_train_normalizes_per_channel() {
        let mut tape = Tape::new();
        let x = tape.leaf(tensor(vec![1, 4, 1], vec![1.0, 2.0, 3.0, 4.0]));
        let gamma = tape.leaf(tensor(vec![1], vec![1.0]));
        let beta = tape.leaf(tensor(vec![1], vec![0.0]));
        let (y, snap) = tape.batchnorm_train(x, gamma, beta).unwrap();
        assert!((snap.mean[0] - 2.5).abs() < 1e-6);
        assert!((snap.var[0] - 1.25).abs() < 1e-6);
        let mean: f32 = tape.value(y).data().iter().sum::<f32>() / 4.0;
        assert!(mean.abs() < 1e-6);
    }
}
