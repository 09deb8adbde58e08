//! Blind image deblurring under pretrained generative priors.
//!
//! The observation model is `y = i (*) k + n` with `(*)` a circular 2-D
//! convolution. Both the sharp image `i` and the blur kernel `k` are unknown;
//! each is constrained to (or tied toward) the range of a pretrained decoder
//! network, and recovery runs as alternating gradient descent over the two
//! latent inputs. The crate bundles everything needed to run that end to end
//! at desk scale: a small autodiff engine, decoder/VAE machinery, motion-blur
//! synthesis, solvers, image-quality metrics, and a CLI experiment harness.

pub mod blursynth;
pub mod diffcore;
pub mod error;
pub mod generators;
pub mod harness;
pub mod metrics;
pub mod pngio;
pub mod optim;
pub mod rng;
pub mod solvers;
pub mod toyimg;

pub use error::{Error, Result};
