//! Decoder/encoder architectures, differentiable evaluation, weight I/O, and
//! desk-scale VAE training.

mod archs;
pub(crate) mod io;
mod network;
mod vae;

pub use archs::{blur_vae_arch, svhn_vae_arch, toy_image_vae_arch};
pub use io::{load_model, save_model};
pub use network::{GeneratorModel, LayerSpec, Mode};
pub use vae::{train_blur_vae, train_vae, TrainReport, VaeArch, VaeConfig, BLUR_TRAIN_SCALE};
