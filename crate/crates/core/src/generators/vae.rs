//! Variational autoencoder training. The decoder half is what the rest of the
//! crate consumes: after training it is extracted as a [`GeneratorModel`] with
//! frozen weights and frozen batchnorm running statistics.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor, TensorRef};
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::rng;

use super::network::{GeneratorModel, LayerSpec, Mode, Network};

/// Encoder trunk + decoder stack. The trunk output is flattened and fed to
/// two dense heads producing the posterior mean and log-variance.
#[derive(Debug, Clone)]
pub struct VaeArch {
    pub latent_dim: usize,
    pub input_shape: Vec<usize>,
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub epochs: usize,
    pub seed: u64,
    /// Noise scale of the Gaussian reconstruction likelihood: the
    /// reconstruction term is `||x - dec(z)||^2 / (2 * recon_noise_std^2)`.
    /// Must be small relative to the data scale or the KL term makes the
    /// mean image the optimum. Defaults to `1/sqrt(2)` (plain squared error).
    #[serde(default = "default_recon_noise_std")]
    pub recon_noise_std: f32,
}

fn default_recon_noise_std() -> f32 {
    std::f32::consts::FRAC_1_SQRT_2
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "vae: latent_dim, batch_size and epochs must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("vae.learning_rate: must be positive".into()));
        }
        if !(self.recon_noise_std > 0.0) {
            return Err(Error::Config("vae.recon_noise_std: must be positive".into()));
        }
        Ok(())
    }

    /// Blur-kernel VAE at publication scale: latent 50, batch 5, Adam 1e-5.
    pub fn blur_paper() -> Self {
        VaeConfig {
            latent_dim: 50,
            batch_size: 5,
            learning_rate: 1e-5,
            epochs: 100,
            seed: 0,
            recon_noise_std: default_recon_noise_std(),
        }
    }

    /// 32x32x3 image VAE at publication scale: latent 100, batch 1500, Adam 1e-5.
    pub fn svhn_paper() -> Self {
        VaeConfig {
            latent_dim: 100,
            batch_size: 1500,
            learning_rate: 1e-5,
            epochs: 100,
            seed: 0,
            recon_noise_std: default_recon_noise_std(),
        }
    }

    /// Desk-scale blur VAE. `recon_noise_std` applies in the scaled space of
    /// [`train_blur_vae`].
    pub fn blur_desk(seed: u64) -> Self {
        VaeConfig {
            latent_dim: 50,
            batch_size: 10,
            learning_rate: 1e-3,
            epochs: 15,
            seed,
            recon_noise_std: 0.15,
        }
    }

    /// Desk-scale toy-image VAE.
    pub fn toy_image_desk(latent_dim: usize, seed: u64) -> Self {
        VaeConfig {
            latent_dim,
            batch_size: 16,
            learning_rate: 1e-3,
            epochs: 40,
            seed,
            recon_noise_std: 0.1,
        }
    }
}

/// Per-step trace and final reconstruction quality of a training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    /// ELBO estimate per optimizer step (negated training loss: reconstruction
    /// plus KL, averaged over the batch).
    pub elbo_trace: Vec<f32>,
    /// Mean per-pixel squared reconstruction error over the dataset, decoding
    /// the posterior mean.
    pub final_recon_mse: f32,
    /// Mean per-pixel squared error of the constant mean-image predictor:
    /// the baseline a useful model must beat.
    pub mean_image_mse: f32,
    pub steps: usize,
}

/// KL divergence of `N(mu, diag(exp(logvar)))` from `N(0, I)` as a tape node.
fn kl_term(tape: &mut Tape, mu: TensorRef, logvar: TensorRef, latent_dim: usize) -> Result<TensorRef> {
    let mu_sq = tape.sum_sq(mu);
    let var = tape.exp(logvar);
    let var_sum = tape.sum(var);
    let lv_sum = tape.sum(logvar);
    let a = tape.add(mu_sq, var_sum)?;
    let b = tape.sub(a, lv_sum)?;
    let c = tape.add_const(b, -(latent_dim as f32));
    Ok(tape.scale(c, 0.5))
}

struct VaeState {
    encoder: Network,
    heads: BTreeMap<String, Tensor>, // mu.w, mu.b, logvar.w, logvar.b
    decoder: Network,
}

impl VaeState {
    fn init(arch: &VaeArch, seed: u64) -> Result<Self> {
        let encoder = Network::init_for_training(
            arch.input_shape.clone(),
            arch.encoder.clone(),
            rng::derive_seed(seed, &["encoder"]),
        )?;
        let feat: usize = encoder.output_shape.iter().product();
        let d = arch.latent_dim;
        let mut heads = BTreeMap::new();
        let limit = (6.0 / (feat + d) as f32).sqrt();
        for head in ["mu", "logvar"] {
            let mut r = rng::seeded(rng::derive_seed(seed, &["head", head]));
            let w = Tensor::new(
                vec![d, feat],
                (0..d * feat).map(|_| rand::Rng::gen_range(&mut r, -limit..limit)).collect(),
            )?;
            heads.insert(format!("{head}.w"), w);
            heads.insert(format!("{head}.b"), Tensor::zeros(vec![d]));
        }
        let decoder = Network::init_for_training(
            vec![arch.latent_dim],
            arch.decoder.clone(),
            rng::derive_seed(seed, &["decoder"]),
        )?;
        if decoder.output_shape != arch.input_shape {
            return Err(Error::Shape(format!(
                "decoder produces {:?}, dataset items are {:?}",
                decoder.output_shape, arch.input_shape
            )));
        }
        Ok(VaeState { encoder, heads, decoder })
    }
}

/// Train a VAE and return the decoder plus the training trace.
///
/// The objective is the negative ELBO with a Gaussian (squared error)
/// reconstruction term: `||x - dec(z)||^2 + KL(N(mu, sigma^2) || N(0, I))`,
/// `z = mu + sigma * eps`, optimized with Adam at `cfg.learning_rate`.
pub fn train_vae(
    dataset: &[Tensor],
    cfg: &VaeConfig,
    arch: &VaeArch,
) -> Result<(GeneratorModel, TrainReport)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Usage("train_vae: empty dataset".into()));
    }
    if arch.latent_dim != cfg.latent_dim {
        return Err(Error::Config(format!(
            "vae.latent_dim: config says {}, architecture says {}",
            cfg.latent_dim, arch.latent_dim
        )));
    }
    for (i, item) in dataset.iter().enumerate() {
        if item.shape() != arch.input_shape.as_slice() {
            return Err(Error::Shape(format!(
                "dataset item {i} has shape {:?}, encoder expects {:?}",
                item.shape(),
                arch.input_shape
            )));
        }
    }

    let mut state = VaeState::init(arch, rng::derive_seed(cfg.seed, &["vae-init"]))?;
    let trainable = trainable_names(&state);
    let mut optimizers: BTreeMap<String, Adam> = trainable
        .iter()
        .map(|name| {
            let dim = lookup(&state, name).numel();
            (name.clone(), Adam::new(cfg.learning_rate, dim))
        })
        .collect();

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut shuffle_rng = rng::seeded(rng::derive_seed(cfg.seed, &["shuffle"]));
    let mut eps_rng = rng::seeded(rng::derive_seed(cfg.seed, &["reparam"]));
    let mut elbo_trace = Vec::new();
    const BN_MOMENTUM: f32 = 0.1;

    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let enc_bound = bind_network(&state.encoder, &mut tape, true);
            let head_bound: BTreeMap<String, TensorRef> = state
                .heads
                .iter()
                .map(|(n, t)| (n.clone(), tape.leaf(t.clone().with_grad())))
                .collect();
            let dec_bound = bind_network(&state.decoder, &mut tape, true);

            let mut batch_loss: Option<TensorRef> = None;
            let mut bn_updates: Vec<(String, Vec<f32>, Vec<f32>)> = Vec::new();
            for &idx in batch {
                let x = tape.leaf(dataset[idx].clone());
                let (feat, enc_snaps) =
                    state.encoder.forward(&mut tape, &enc_bound, x, Mode::Train)?;
                for (layer, snap) in enc_snaps {
                    bn_updates.push((format!("enc:l{layer}"), snap.mean, snap.var));
                }
                let flat_len = tape.value(feat).numel();
                let flat = tape.reshape(feat, vec![flat_len])?;
                let mu = tape.dense(flat, head_bound["mu.w"], head_bound["mu.b"])?;
                let logvar = tape.dense(flat, head_bound["logvar.w"], head_bound["logvar.b"])?;

                let eps: Vec<f32> =
                    (0..cfg.latent_dim).map(|_| StandardNormal.sample(&mut eps_rng)).collect();
                let eps = tape.leaf(Tensor::from_vec(eps));
                let half_lv = tape.scale(logvar, 0.5);
                let sigma = tape.exp(half_lv);
                let noise = tape.mul(sigma, eps)?;
                let z = tape.add(mu, noise)?;

                let (xhat, dec_snaps) =
                    state.decoder.forward(&mut tape, &dec_bound, z, Mode::Train)?;
                for (layer, snap) in dec_snaps {
                    bn_updates.push((format!("dec:l{layer}"), snap.mean, snap.var));
                }
                let diff = tape.sub(xhat, x)?;
                let recon = tape.sum_sq(diff);
                let recon = tape.scale(recon, 0.5 / (cfg.recon_noise_std * cfg.recon_noise_std));
                let kl = kl_term(&mut tape, mu, logvar, cfg.latent_dim)?;
                let sample_loss = tape.add(recon, kl)?;
                batch_loss = Some(match batch_loss {
                    Some(acc) => tape.add(acc, sample_loss)?,
                    None => sample_loss,
                });
            }
            let total = batch_loss.expect("non-empty batch");
            let mean_loss = tape.scale(total, 1.0 / batch.len() as f32);
            let loss_value = tape.value(mean_loss).item()?;
            if !loss_value.is_finite() {
                return Err(Error::Numeric("vae training loss diverged".into()));
            }
            tape.backward(mean_loss)?;

            for name in &trainable {
                let r = resolve_bound(name, &enc_bound, &head_bound, &dec_bound);
                let grad = tape.grad(r).expect("trainable leaf").to_vec();
                let param = lookup_mut(&mut state, name);
                optimizers.get_mut(name).expect("registered").step(param.data_mut(), &grad);
            }
            apply_bn_updates(&mut state, &bn_updates, BN_MOMENTUM);
            elbo_trace.push(-loss_value);
        }
    }

    let steps = elbo_trace.len();
    let (final_recon_mse, mean_image_mse) = reconstruction_quality(&state, dataset)?;
    let decoder = GeneratorModel::from_network(state.decoder);
    Ok((decoder, TrainReport { elbo_trace, final_recon_mse, mean_image_mse, steps }))
}

/// Kernel canvases carry values of order `1/length`; training regresses them
/// at this scale so Glorot-initialized relu stacks behave.
pub const BLUR_TRAIN_SCALE: f32 = 28.0;

/// Train the kernel VAE on scale-normalized canvases, then fold the scale
/// back into the decoder's final pre-relu layer so the returned generator
/// decodes kernels at their native (roughly unit-mass) scale.
///
/// `kernels` are `[28, 28, 1]` canvases; `cfg.recon_noise_std` applies in the
/// scaled space. Reported reconstruction errors are converted back to the
/// native scale.
pub fn train_blur_vae(
    kernels: &[Tensor],
    cfg: &VaeConfig,
) -> Result<(GeneratorModel, TrainReport)> {
    let arch = crate::generators::blur_vae_arch();
    let mut arch = arch;
    arch.latent_dim = cfg.latent_dim;
    let scaled: Vec<Tensor> = kernels
        .iter()
        .map(|k| {
            Tensor::new(
                k.shape().to_vec(),
                k.data().iter().map(|&v| v * BLUR_TRAIN_SCALE).collect(),
            )
            .expect("same shape")
        })
        .collect();
    let (decoder, mut report) = train_vae(&scaled, cfg, &arch)?;

    // Fold 1/scale into the last layer: relu(Wa + b) / s == relu(Wa/s + b/s).
    let last_idx = decoder
        .layers()
        .iter()
        .enumerate()
        .rev()
        .find(|(_, l)| matches!(l, LayerSpec::Dense { .. } | LayerSpec::Conv { .. } | LayerSpec::ConvT { .. }))
        .map(|(i, _)| i)
        .expect("decoder has a weight-bearing layer");
    let mut weights = decoder.weights().clone();
    for part in ["w", "b"] {
        let key = format!("l{last_idx}.{part}");
        if let Some(t) = weights.get_mut(&key) {
            for v in t.data_mut() {
                *v /= BLUR_TRAIN_SCALE;
            }
        }
    }
    let folded = GeneratorModel::new(cfg.latent_dim, decoder.layers().to_vec(), weights)?;

    let s2 = BLUR_TRAIN_SCALE * BLUR_TRAIN_SCALE;
    report.final_recon_mse /= s2;
    report.mean_image_mse /= s2;
    Ok((folded, report))
}

fn trainable_names(state: &VaeState) -> Vec<String> {
    let mut names: Vec<String> = state
        .encoder
        .trainable_names()
        .into_iter()
        .map(|n| format!("enc:{n}"))
        .collect();
    names.extend(state.heads.keys().map(|n| format!("head:{n}")));
    names.extend(state.decoder.trainable_names().into_iter().map(|n| format!("dec:{n}")));
    names
}

fn lookup<'a>(state: &'a VaeState, name: &str) -> &'a Tensor {
    let (scope, key) = name.split_once(':').expect("scoped name");
    match scope {
        "enc" => &state.encoder.weights[key],
        "head" => &state.heads[key],
        "dec" => &state.decoder.weights[key],
        _ => unreachable!("unknown scope {scope}"),
    }
}

fn lookup_mut<'a>(state: &'a mut VaeState, name: &str) -> &'a mut Tensor {
    let (scope, key) = name.split_once(':').expect("scoped name");
    match scope {
        "enc" => state.encoder.weights.get_mut(key).expect("known weight"),
        "head" => state.heads.get_mut(key).expect("known weight"),
        "dec" => state.decoder.weights.get_mut(key).expect("known weight"),
        _ => unreachable!("unknown scope {scope}"),
    }
}

fn resolve_bound(
    name: &str,
    enc: &BTreeMap<String, TensorRef>,
    heads: &BTreeMap<String, TensorRef>,
    dec: &BTreeMap<String, TensorRef>,
) -> TensorRef {
    let (scope, key) = name.split_once(':').expect("scoped name");
    match scope {
        "enc" => enc[key],
        "head" => heads[key],
        "dec" => dec[key],
        _ => unreachable!("unknown scope {scope}"),
    }
}

fn bind_network(net: &Network, tape: &mut Tape, requires_grad: bool) -> BTreeMap<String, TensorRef> {
    net.bind(tape, requires_grad)
}

/// Exponential moving average of batch statistics into the stored
/// running_mean/running_var entries.
fn apply_bn_updates(state: &mut VaeState, updates: &[(String, Vec<f32>, Vec<f32>)], momentum: f32) {
    for (scoped, mean, var) in updates {
        let (scope, layer) = scoped.split_once(':').expect("scoped name");
        let net = match scope {
            "enc" => &mut state.encoder,
            "dec" => &mut state.decoder,
            _ => unreachable!(),
        };
        for (part, batch) in [("running_mean", mean), ("running_var", var)] {
            let key = format!("{layer}.{part}");
            if let Some(t) = net.weights.get_mut(&key) {
                for (slot, b) in t.data_mut().iter_mut().zip(batch) {
                    *slot = (1.0 - momentum) * *slot + momentum * b;
                }
            }
        }
    }
}

/// Reconstruction MSE decoding the posterior mean, next to the mean-image
/// baseline.
fn reconstruction_quality(state: &VaeState, dataset: &[Tensor]) -> Result<(f32, f32)> {
    let numel = dataset[0].numel();
    let mut mean_image = vec![0.0f64; numel];
    for item in dataset {
        for (slot, v) in mean_image.iter_mut().zip(item.data()) {
            *slot += f64::from(*v);
        }
    }
    for slot in mean_image.iter_mut() {
        *slot /= dataset.len() as f64;
    }

    let mut model_se = 0.0f64;
    let mut baseline_se = 0.0f64;
    for item in dataset {
        let mut tape = Tape::new();
        let enc_bound = bind_network(&state.encoder, &mut tape, false);
        let x = tape.leaf(item.clone());
        let (feat, _) = state.encoder.forward(&mut tape, &enc_bound, x, Mode::Infer)?;
        let flat_len = tape.value(feat).numel();
        let flat = tape.reshape(feat, vec![flat_len])?;
        let mu_w = tape.leaf(state.heads["mu.w"].clone());
        let mu_b = tape.leaf(state.heads["mu.b"].clone());
        let mu = tape.dense(flat, mu_w, mu_b)?;
        let dec_bound = bind_network(&state.decoder, &mut tape, false);
        let (xhat, _) = state.decoder.forward(&mut tape, &dec_bound, mu, Mode::Infer)?;
        for (a, b) in tape.value(xhat).data().iter().zip(item.data()) {
            model_se += (f64::from(*a) - f64::from(*b)).powi(2);
        }
        for (m, b) in mean_image.iter().zip(item.data()) {
            baseline_se += (m - f64::from(*b)).powi(2);
        }
    }
    let n = (dataset.len() * numel) as f64;
    Ok(((model_se / n) as f32, (baseline_se / n) as f32))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_of_standard_gaussian_is_zero() {
        let mut tape = Tape::new();
        let mu = tape.leaf(Tensor::from_vec(vec![0.0; 4]));
        let logvar = tape.leaf(Tensor::from_vec(vec![0.0; 4])); // sigma = 1
        let kl = kl_term(&mut tape, mu, logvar, 4).unwrap();
        assert!(tape.value(kl).item().unwrap().abs() < 1e-6);
    }

    #[test]
    fn kl_positive_away_from_prior() {
        let mut tape = Tape::new();
        let mu = tape.leaf(Tensor::from_vec(vec![1.0, -2.0]));
        let logvar = tape.leaf(Tensor::from_vec(vec![0.5, -0.5]));
        let kl = kl_term(&mut tape, mu, logvar, 2).unwrap();
        // 0.5 * sum(mu^2 + e^lv - 1 - lv)
        let expect = 0.5
            * ((1.0f32 + 0.5f32.exp() - 1.0 - 0.5) + (4.0 + (-0.5f32).exp() - 1.0 + 0.5));
        assert!((tape.value(kl).item().unwrap() - expect).abs() < 1e-5);
    }

    #[test]
    fn reparameterization_with_zero_noise_returns_mu() {
        let mut tape = Tape::new();
        let mu = tape.leaf(Tensor::from_vec(vec![0.3, -0.7]));
        let logvar = tape.leaf(Tensor::from_vec(vec![0.2, 0.4]));
        let eps = tape.leaf(Tensor::from_vec(vec![0.0, 0.0]));
        let half = tape.scale(logvar, 0.5);
        let sigma = tape.exp(half);
        let noise = tape.mul(sigma, eps).unwrap();
        let z = tape.add(mu, noise).unwrap();
        assert_eq!(tape.value(z).data(), &[0.3, -0.7]);
    }

    #[test]
    fn rejects_empty_dataset_and_shape_mismatch() {
        let arch = crate::generators::toy_image_vae_arch(4, 2);
        let cfg = VaeConfig {
            latent_dim: 2,
            batch_size: 2,
            learning_rate: 1e-3,
            epochs: 1,
            seed: 1,
            recon_noise_std: 0.1,
        };
        assert!(train_vae(&[], &cfg, &arch).is_err());
        let bad = vec![Tensor::zeros(vec![5, 5, 1])];
        assert!(train_vae(&bad, &cfg, &arch).is_err());
    }
}
