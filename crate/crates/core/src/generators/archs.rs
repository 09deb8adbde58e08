//! Canonical encoder/decoder layer stacks.

use super::network::LayerSpec;
use super::vae::VaeArch;

/// VAE for 28x28 motion-blur kernels, latent dimension 50. The decoder ends
/// in relu, so decoded kernels are nonnegative but not sum-normalized; any
/// normalization happens at reporting time.
///
/// Decoder shape walk: fc(720) -> [6,6,20] -> upsample -> [12,12,20] ->
/// convT(2x2,1) -> [13,13,20] -> upsample -> [26,26,20] -> convT -> [27,27,20]
/// -> convT -> [28,28,1].
pub fn blur_vae_arch() -> VaeArch {
    VaeArch {
        latent_dim: 50,
        input_shape: vec![28, 28, 1],
        encoder: vec![
            LayerSpec::Conv { filters: 20, size: 2, stride: 1 },
            LayerSpec::Relu,
            LayerSpec::Maxpool { size: 2, stride: 2 },
            LayerSpec::Conv { filters: 20, size: 2, stride: 1 },
            LayerSpec::Relu,
            LayerSpec::Maxpool { size: 2, stride: 2 },
        ],
        decoder: vec![
            LayerSpec::Dense { units: 720 },
            LayerSpec::Relu,
            LayerSpec::Reshape { shape: vec![6, 6, 20] },
            LayerSpec::Upsample { factor: 2 },
            LayerSpec::ConvT { filters: 20, size: 2, stride: 1 },
            LayerSpec::Relu,
            LayerSpec::Upsample { factor: 2 },
            LayerSpec::ConvT { filters: 20, size: 2, stride: 1 },
            LayerSpec::Relu,
            LayerSpec::ConvT { filters: 1, size: 2, stride: 1 },
            LayerSpec::Relu,
        ],
    }
}

/// VAE for 32x32x3 images, latent dimension 100, sigmoid output head.
/// Training it to publication quality needs a full-size dataset; the
/// architecture is provided for completeness and for shape tests.
pub fn svhn_vae_arch() -> VaeArch {
    VaeArch {
        latent_dim: 100,
        input_shape: vec![32, 32, 3],
        encoder: vec![
            LayerSpec::Conv { filters: 128, size: 2, stride: 2 },
            LayerSpec::Batchnorm,
            LayerSpec::Relu,
            LayerSpec::Conv { filters: 256, size: 2, stride: 2 },
            LayerSpec::Batchnorm,
            LayerSpec::Relu,
            LayerSpec::Conv { filters: 512, size: 2, stride: 2 },
            LayerSpec::Batchnorm,
            LayerSpec::Relu,
        ],
        decoder: vec![
            LayerSpec::Dense { units: 8192 },
            LayerSpec::Reshape { shape: vec![4, 4, 512] },
            LayerSpec::ConvT { filters: 512, size: 2, stride: 2 },
            LayerSpec::Batchnorm,
            LayerSpec::Relu,
            LayerSpec::ConvT { filters: 256, size: 2, stride: 2 },
            LayerSpec::Batchnorm,
            LayerSpec::Relu,
            LayerSpec::ConvT { filters: 128, size: 2, stride: 2 },
            LayerSpec::Batchnorm,
            LayerSpec::Relu,
            LayerSpec::Conv { filters: 3, size: 1, stride: 1 },
            LayerSpec::Sigmoid,
        ],
    }
}

/// Small dense VAE for procedurally generated grayscale images of
/// `size x size` pixels. Trains to a usable decoder in a few thousand steps
/// on a laptop-scale budget.
pub fn toy_image_vae_arch(size: usize, latent_dim: usize) -> VaeArch {
    VaeArch {
        latent_dim,
        input_shape: vec![size, size, 1],
        encoder: vec![LayerSpec::Dense { units: 256 }, LayerSpec::Relu],
        decoder: vec![
            LayerSpec::Dense { units: 256 },
            LayerSpec::Relu,
            LayerSpec::Dense { units: size * size },
            LayerSpec::Sigmoid,
            LayerSpec::Reshape { shape: vec![size, size, 1] },
        ],
    }
}
