//! The three recovery procedures: range projection, alternating latent
//! descent (`deep_deblur`), and its slack variant (`deep_deblur_slack`) that
//! lets the image leave the generator range under a range-error tie and a
//! total-variation prior.
//!
//! All solvers run a fixed number of random restarts from fresh Gaussian
//! initializations and keep the restart whose final data-fit term is
//! smallest. Every restart is deterministic given `(seed, restart index)`,
//! so restarts may run in parallel without affecting results.

use std::time::{Duration, Instant};

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blursynth::{BlurKernel, Observation, KERNEL_CANVAS};
use crate::diffcore::{Tape, Tensor, TensorRef};
use crate::error::{Error, Result};
use crate::generators::GeneratorModel;
use crate::optim::Adam;
use crate::rng;

/// Alternating gradient descent configuration. The step size decays as
/// `eta_t = step_size * exp(-t / decay_steps)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdConfig {
    /// Weight on `||z_i||^2`.
    pub gamma: f32,
    /// Weight on `||z_k||^2`.
    pub lambda: f32,
    pub steps: usize,
    pub step_size: f32,
    pub decay_steps: f32,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for DdConfig {
    /// Publication defaults for 32x32-class images: gamma = lambda = 0.01,
    /// 6000 steps at 0.01 * exp(-t/1000), 10 restarts.
    fn default() -> Self {
        DdConfig {
            gamma: 0.01,
            lambda: 0.01,
            steps: 6000,
            step_size: 0.01,
            decay_steps: 1000.0,
            restarts: 10,
            seed: 0,
        }
    }
}

impl DdConfig {
    /// Publication defaults for 64x64-class images (10000 steps).
    pub fn paper_large() -> Self {
        DdConfig { steps: 10_000, ..DdConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma < 0.0 || self.lambda < 0.0 {
            return Err(Error::Config("dd.gamma/lambda: must be nonnegative".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Config("dd.restarts: must be at least 1".into()));
        }
        if !(self.step_size > 0.0) || !(self.decay_steps > 0.0) {
            return Err(Error::Config("dd.step_size/decay_steps: must be positive".into()));
        }
        Ok(())
    }
}

/// Slack-variant configuration: data term on a free image `i`, range error
/// `tau * ||i - G_I(z_i)||^2`, in-range measurement `zeta * ||y - G_I(z_i)
/// (*) G_K(z_k)||^2`, and `rho * ||i||_tv`, optimized cyclically with Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdsConfig {
    pub tau: f32,
    pub zeta: f32,
    pub rho: f32,
    pub steps: usize,
    pub adam_lr: f32,
    pub restarts: usize,
    pub seed: u64,
    pub image_init_mean: f32,
    pub image_init_std: f32,
}

impl Default for DdsConfig {
    /// Publication defaults: tau 100, zeta 0.5, rho 1e-3, 10000 Adam steps at
    /// 0.005, 10 restarts, image initialized from N(0.5, 0.01 I).
    fn default() -> Self {
        DdsConfig {
            tau: 100.0,
            zeta: 0.5,
            rho: 1e-3,
            steps: 10_000,
            adam_lr: 0.005,
            restarts: 10,
            seed: 0,
            image_init_mean: 0.5,
            image_init_std: 0.1,
        }
    }
}

impl DdsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau < 0.0 || self.zeta < 0.0 || self.rho < 0.0 {
            return Err(Error::Config("dds.tau/zeta/rho: must be nonnegative".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Config("dds.restarts: must be at least 1".into()));
        }
        if !(self.adam_lr > 0.0) {
            return Err(Error::Config("dds.adam_lr: must be positive".into()));
        }
        if self.image_init_std < 0.0 {
            return Err(Error::Config("dds.image_init_std: must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Outcome of one restart that ran to completion.
#[derive(Debug, Clone)]
struct RestartRun {
    z_i: Vec<f32>,
    z_k: Vec<f32>,
    image: Option<Vec<f32>>, // slack variant only
    trace: Vec<(f32, f32)>,
    final_total: f32,
    final_measurement: f32,
}

/// Per-restart summary kept on the result for dominance checks and reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub restart: usize,
    pub final_total: Option<f32>,
    pub final_measurement: Option<f32>,
    /// Present when the restart was abandoned (non-finite loss), with the
    /// step at which it happened.
    pub aborted: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub z_i_hat: Tensor,
    pub z_k_hat: Tensor,
    /// Recovered image: `decode(z_i_hat)` for `deep_deblur`; the free image
    /// variable clipped to [0, 1] for the slack variant.
    pub i_hat: Tensor,
    /// Sum-normalized copy of `decode(z_k_hat)`.
    pub k_hat: Tensor,
    /// Per-iteration `(total loss, measurement loss)` of the chosen restart,
    /// evaluated at the start of each iteration, plus a final entry at the
    /// last iterate.
    pub loss_trace: Vec<(f32, f32)>,
    pub chosen_restart: usize,
    pub restart_summaries: Vec<RestartSummary>,
    pub elapsed: Duration,
}

impl SolveResult {
    pub fn final_measurement_loss(&self) -> f32 {
        self.loss_trace.last().map(|&(_, m)| m).unwrap_or(f32::INFINITY)
    }

    /// The recovered kernel as a canvas kernel, when `G_K` decodes at the
    /// standard canvas size.
    pub fn kernel(&self) -> Result<BlurKernel> {
        let canvas = self.k_hat.clone().reshaped(vec![KERNEL_CANVAS, KERNEL_CANVAS])?;
        BlurKernel::from_canvas(canvas, f32::NAN)
    }
}

/// Decoded kernels arrive as `[kh, kw, 1]`; the convolution wants `[kh, kw]`.
fn as_kernel_2d(tape: &mut Tape, k: TensorRef) -> Result<TensorRef> {
    match tape.value(k).shape() {
        [_, _] => Ok(k),
        [h, w, 1] => {
            let (h, w) = (*h, *w);
            tape.reshape(k, vec![h, w])
        }
        other => Err(Error::Shape(format!("kernel decoder output must be 2-D, got {other:?}"))),
    }
}

pub struct DdTerms {
    pub total: TensorRef,
    pub measurement: TensorRef,
}

/// `||y - G_I(z_i) (*) G_K(z_k)||^2 + gamma ||z_i||^2 + lambda ||z_k||^2`
/// assembled on `tape`, differentiable in both latents.
pub fn dd_loss_on_tape(
    tape: &mut Tape,
    y: TensorRef,
    z_i: TensorRef,
    z_k: TensorRef,
    g_i: &GeneratorModel,
    g_k: &GeneratorModel,
    gamma: f32,
    lambda: f32,
) -> Result<DdTerms> {
    let image = g_i.decode_on_tape(tape, z_i)?;
    let kernel = g_k.decode_on_tape(tape, z_k)?;
    let kernel = as_kernel_2d(tape, kernel)?;
    let blurred = tape.conv2d_full(image, kernel)?;
    let resid = tape.sub(y, blurred)?;
    let measurement = tape.sum_sq(resid);
    let zi_pen = tape.sum_sq(z_i);
    let zi_pen = tape.scale(zi_pen, gamma);
    let zk_pen = tape.sum_sq(z_k);
    let zk_pen = tape.scale(zk_pen, lambda);
    let partial = tape.add(measurement, zi_pen)?;
    let total = tape.add(partial, zk_pen)?;
    Ok(DdTerms { total, measurement })
}

/// Value-only evaluation of the alternating-descent objective.
pub fn dd_loss(
    y: &Tensor,
    z_i: &Tensor,
    z_k: &Tensor,
    g_i: &GeneratorModel,
    g_k: &GeneratorModel,
    gamma: f32,
    lambda: f32,
) -> Result<f32> {
    let mut tape = Tape::new();
    let yr = tape.leaf(y.clone());
    let zi = tape.leaf(z_i.clone());
    let zk = tape.leaf(z_k.clone());
    let terms = dd_loss_on_tape(&mut tape, yr, zi, zk, g_i, g_k, gamma, lambda)?;
    tape.value(terms.total).item()
}

pub struct DdsTerms {
    pub total: TensorRef,
    /// First term `||y - i (*) G_K(z_k)||^2`: the restart-selection criterion.
    pub data: TensorRef,
}

/// `||y - i (*) G_K(z_k)||^2 + tau ||i - G_I(z_i)||^2 +
/// zeta ||y - G_I(z_i) (*) G_K(z_k)||^2 + rho ||i||_tv` on `tape`.
#[allow(clippy::too_many_arguments)]
pub fn dds_loss_on_tape(
    tape: &mut Tape,
    y: TensorRef,
    image: TensorRef,
    z_i: TensorRef,
    z_k: TensorRef,
    g_i: &GeneratorModel,
    g_k: &GeneratorModel,
    tau: f32,
    zeta: f32,
    rho: f32,
) -> Result<DdsTerms> {
    let range_image = g_i.decode_on_tape(tape, z_i)?;
    let kernel = g_k.decode_on_tape(tape, z_k)?;
    let kernel = as_kernel_2d(tape, kernel)?;

    let blurred_free = tape.conv2d_full(image, kernel)?;
    let resid_free = tape.sub(y, blurred_free)?;
    let data = tape.sum_sq(resid_free);

    let range_resid = tape.sub(image, range_image)?;
    let range_err = tape.sum_sq(range_resid);
    let range_err = tape.scale(range_err, tau);

    let blurred_range = tape.conv2d_full(range_image, kernel)?;
    let resid_range = tape.sub(y, blurred_range)?;
    let in_range = tape.sum_sq(resid_range);
    let in_range = tape.scale(in_range, zeta);

    let tv = tape.tv_norm(image)?;
    let tv = tape.scale(tv, rho);

    let a = tape.add(data, range_err)?;
    let b = tape.add(a, in_range)?;
    let total = tape.add(b, tv)?;
    Ok(DdsTerms { total, data })
}

/// Value-only evaluation of the slack objective.
#[allow(clippy::too_many_arguments)]
pub fn dds_loss(
    y: &Tensor,
    image: &Tensor,
    z_i: &Tensor,
    z_k: &Tensor,
    g_i: &GeneratorModel,
    g_k: &GeneratorModel,
    tau: f32,
    zeta: f32,
    rho: f32,
) -> Result<f32> {
    let mut tape = Tape::new();
    let yr = tape.leaf(y.clone());
    let ir = tape.leaf(image.clone());
    let zi = tape.leaf(z_i.clone());
    let zk = tape.leaf(z_k.clone());
    let terms = dds_loss_on_tape(&mut tape, yr, ir, zi, zk, g_i, g_k, tau, zeta, rho)?;
    tape.value(terms.total).item()
}

fn sample_gaussian(rng: &mut rng::Rng, dim: usize, mean: f32, std: f32) -> Vec<f32> {
    (0..dim)
        .map(|_| {
            let n: f32 = StandardNormal.sample(rng);
            mean + std * n
        })
        .collect()
}

fn check_observation(y: &Observation, g_i: &GeneratorModel) -> Result<()> {
    if y.y_raw.shape() != g_i.output_shape() {
        return Err(Error::Shape(format!(
            "observation shape {:?} does not match image decoder output {:?}",
            y.y_raw.shape(),
            g_i.output_shape()
        )));
    }
    Ok(())
}

enum RestartOutcome {
    Done(RestartRun),
    Aborted { step: usize, message: String },
}

/// Pick the completed restart with the smallest final measurement loss
/// (ties: lowest index), or fail if every restart aborted.
fn select_best(
    outcomes: Vec<RestartOutcome>,
    what: &str,
) -> Result<(usize, RestartRun, Vec<RestartSummary>)> {
    let mut summaries = Vec::with_capacity(outcomes.len());
    let mut best: Option<(usize, &RestartRun)> = None;
    for (idx, outcome) in outcomes.iter().enumerate() {
        match outcome {
            RestartOutcome::Done(run) => {
                summaries.push(RestartSummary {
                    restart: idx,
                    final_total: Some(run.final_total),
                    final_measurement: Some(run.final_measurement),
                    aborted: None,
                });
                let better = match best {
                    None => true,
                    Some((_, b)) => run.final_measurement < b.final_measurement,
                };
                if better {
                    best = Some((idx, run));
                }
            }
            RestartOutcome::Aborted { step, message } => summaries.push(RestartSummary {
                restart: idx,
                final_total: None,
                final_measurement: None,
                aborted: Some(format!("step {step}: {message}")),
            }),
        }
    }
    match best {
        Some((idx, run)) => Ok((idx, run.clone(), summaries)),
        None => Err(Error::Solver(format!("{what}: every restart diverged"))),
    }
}

fn renormalized_kernel(g_k: &GeneratorModel, z_k: &Tensor) -> Result<Tensor> {
    let decoded = g_k.decode(z_k)?;
    let total: f64 = decoded.data().iter().map(|&v| f64::from(v)).sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Solver(
            "recovered kernel has zero or non-finite mass; cannot normalize".into(),
        ));
    }
    let data: Vec<f32> = decoded.data().iter().map(|&v| (f64::from(v) / total) as f32).collect();
    Tensor::new(decoded.shape().to_vec(), data)
}

/// Blind deblurring by alternating gradient descent over `(z_i, z_k)`.
///
/// Each restart samples both latents from N(0, I) and runs `steps`
/// iterations; one iteration takes a `z_i` step and then a `z_k` step, each
/// with freshly computed gradients. The exported result comes from the
/// restart with the smallest final measurement loss.
pub fn deep_deblur(
    y: &Observation,
    g_i: &GeneratorModel,
    g_k: &GeneratorModel,
    cfg: &DdConfig,
) -> Result<SolveResult> {
    cfg.validate()?;
    check_observation(y, g_i)?;
    let started = Instant::now();

    let outcomes: Vec<RestartOutcome> = (0..cfg.restarts)
        .into_par_iter()
        .map(|restart| dd_restart(&y.y_raw, g_i, g_k, cfg, restart))
        .collect();

    let (chosen, run, summaries) = select_best(outcomes, "deep_deblur")?;
    let z_i_hat = Tensor::from_vec(run.z_i);
    let z_k_hat = Tensor::from_vec(run.z_k);
    let i_hat = g_i.decode(&z_i_hat)?;
    let k_hat = renormalized_kernel(g_k, &z_k_hat)?;
    Ok(SolveResult {
        z_i_hat,
        z_k_hat,
        i_hat,
        k_hat,
        loss_trace: run.trace,
        chosen_restart: chosen,
        restart_summaries: summaries,
        elapsed: started.elapsed(),
    })
}

fn dd_restart(
    y: &Tensor,
    g_i: &GeneratorModel,
    g_k: &GeneratorModel,
    cfg: &DdConfig,
    restart: usize,
) -> RestartOutcome {
    let seed = rng::derive_seed(cfg.seed, &["dd", &restart.to_string()]);
    let mut r = rng::seeded(seed);
    let mut z_i = sample_gaussian(&mut r, g_i.latent_dim(), 0.0, 1.0);
    let mut z_k = sample_gaussian(&mut r, g_k.latent_dim(), 0.0, 1.0);
    let mut trace = Vec::with_capacity(cfg.steps + 1);

    let eval = |z_i: &[f32], z_k: &[f32], grad_for: usize| -> Result<(f32, f32, Option<Vec<f32>>)> {
        let mut tape = Tape::new();
        let yr = tape.leaf(y.clone());
        let zi_t = Tensor::from_vec(z_i.to_vec());
        let zk_t = Tensor::from_vec(z_k.to_vec());
        let zi = tape.leaf(if grad_for == 0 { zi_t.with_grad() } else { zi_t });
        let zk = tape.leaf(if grad_for == 1 { zk_t.with_grad() } else { zk_t });
        let terms = dd_loss_on_tape(&mut tape, yr, zi, zk, g_i, g_k, cfg.gamma, cfg.lambda)?;
        let total = tape.value(terms.total).item()?;
        let measurement = tape.value(terms.measurement).item()?;
        if !total.is_finite() {
            return Err(Error::Numeric("loss is not finite".into()));
        }
        let grad = match grad_for {
            0 => {
                tape.backward(terms.total)?;
                Some(tape.grad(zi).expect("leaf gradient").to_vec())
            }
            1 => {
                tape.backward(terms.total)?;
                Some(tape.grad(zk).expect("leaf gradient").to_vec())
            }
            _ => None,
        };
        Ok((total, measurement, grad))
    };

    for t in 0..cfg.steps {
        let eta = cfg.step_size * (-(t as f32) / cfg.decay_steps).exp();
        // z_i half-step at (z_i, z_k)
        match eval(&z_i, &z_k, 0) {
            Ok((total, measurement, Some(grad))) => {
                trace.push((total, measurement));
                for (z, g) in z_i.iter_mut().zip(&grad) {
                    *z -= eta * g;
                }
            }
            Ok(_) => unreachable!("gradient requested"),
            Err(e) => return RestartOutcome::Aborted { step: t, message: e.to_string() },
        }
        // z_k half-step at the updated z_i
        match eval(&z_i, &z_k, 1) {
            Ok((_, _, Some(grad))) => {
                for (z, g) in z_k.iter_mut().zip(&grad) {
                    *z -= eta * g;
                }
            }
            Ok(_) => unreachable!("gradient requested"),
            Err(e) => return RestartOutcome::Aborted { step: t, message: e.to_string() },
        }
    }

    match eval(&z_i, &z_k, 2) {
        Ok((total, measurement, _)) => {
            trace.push((total, measurement));
            RestartOutcome::Done(RestartRun {
                z_i,
                z_k,
                image: None,
                trace,
                final_total: total,
                final_measurement: measurement,
            })
        }
        Err(e) => RestartOutcome::Aborted { step: cfg.steps, message: e.to_string() },
    }
}

/// Blind deblurring with a free image variable tied to the generator range.
///
/// Per restart: `z_i, z_k ~ N(0, I)`, `i ~ N(image_init_mean,
/// image_init_std^2 I)`; each iteration takes Adam steps in `z_i`, `z_k`,
/// then `i`, each with fresh gradients. Restart selection uses the final
/// value of the free-image data term; the returned image is clipped to
/// [0, 1] at output only.
pub fn deep_deblur_slack(
    y: &Observation,
    g_i: &GeneratorModel,
    g_k: &GeneratorModel,
    cfg: &DdsConfig,
) -> Result<SolveResult> {
    cfg.validate()?;
    check_observation(y, g_i)?;
    let started = Instant::now();

    let outcomes: Vec<RestartOutcome> = (0..cfg.restarts)
        .into_par_iter()
        .map(|restart| dds_restart(&y.y_raw, g_i, g_k, cfg, restart))
        .collect();

    let (chosen, run, summaries) = select_best(outcomes, "deep_deblur_slack")?;
    let z_i_hat = Tensor::from_vec(run.z_i);
    let z_k_hat = Tensor::from_vec(run.z_k);
    let image = run.image.expect("slack restart carries the free image");
    let clipped: Vec<f32> = image.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let i_hat = Tensor::new(g_i.output_shape().to_vec(), clipped)?;
    let k_hat = renormalized_kernel(g_k, &z_k_hat)?;
    Ok(SolveResult {
        z_i_hat,
        z_k_hat,
        i_hat,
        k_hat,
        loss_trace: run.trace,
        chosen_restart: chosen,
        restart_summaries: summaries,
        elapsed: started.elapsed(),
    })
}

fn dds_restart(
    y: &Tensor,
    g_i: &GeneratorModel,
    g_k: &GeneratorModel,
    cfg: &DdsConfig,
    restart: usize,
) -> RestartOutcome {
    let seed = rng::derive_seed(cfg.seed, &["dds", &restart.to_string()]);
    let mut r = rng::seeded(seed);
    let image_numel: usize = g_i.output_shape().iter().product();
    let mut z_i = sample_gaussian(&mut r, g_i.latent_dim(), 0.0, 1.0);
    let mut z_k = sample_gaussian(&mut r, g_k.latent_dim(), 0.0, 1.0);
    let mut image = sample_gaussian(&mut r, image_numel, cfg.image_init_mean, cfg.image_init_std);

    let mut adam_zi = Adam::new(cfg.adam_lr, z_i.len());
    let mut adam_zk = Adam::new(cfg.adam_lr, z_k.len());
    let mut adam_img = Adam::new(cfg.adam_lr, image.len());
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let image_shape = g_i.output_shape().to_vec();

    // grad_for: 0 = z_i, 1 = z_k, 2 = image, 3 = none
    let eval = |z_i: &[f32], z_k: &[f32], image: &[f32], grad_for: usize| -> Result<(f32, f32, Option<Vec<f32>>)> {
        let mut tape = Tape::new();
        let yr = tape.leaf(y.clone());
        let img_t = Tensor::new(image_shape.clone(), image.to_vec())?;
        let zi_t = Tensor::from_vec(z_i.to_vec());
        let zk_t = Tensor::from_vec(z_k.to_vec());
        let ir = tape.leaf(if grad_for == 2 { img_t.with_grad() } else { img_t });
        let zi = tape.leaf(if grad_for == 0 { zi_t.with_grad() } else { zi_t });
        let zk = tape.leaf(if grad_for == 1 { zk_t.with_grad() } else { zk_t });
        let terms =
            dds_loss_on_tape(&mut tape, yr, ir, zi, zk, g_i, g_k, cfg.tau, cfg.zeta, cfg.rho)?;
        let total = tape.value(terms.total).item()?;
        let data = tape.value(terms.data).item()?;
        if !total.is_finite() {
            return Err(Error::Numeric("loss is not finite".into()));
        }
        let grad = if grad_for <= 2 {
            tape.backward(terms.total)?;
            let target = match grad_for {
                0 => zi,
                1 => zk,
                _ => ir,
            };
            Some(tape.grad(target).expect("leaf gradient").to_vec())
        } else {
            None
        };
        Ok((total, data, grad))
    };

    for t in 0..cfg.steps {
        match eval(&z_i, &z_k, &image, 0) {
            Ok((total, data, Some(grad))) => {
                trace.push((total, data));
                adam_zi.step(&mut z_i, &grad);
            }
            Ok(_) => unreachable!("gradient requested"),
            Err(e) => return RestartOutcome::Aborted { step: t, message: e.to_string() },
        }
        match eval(&z_i, &z_k, &image, 1) {
            Ok((_, _, Some(grad))) => adam_zk.step(&mut z_k, &grad),
            Ok(_) => unreachable!("gradient requested"),
            Err(e) => return RestartOutcome::Aborted { step: t, message: e.to_string() },
        }
        match eval(&z_i, &z_k, &image, 2) {
            Ok((_, _, Some(grad))) => adam_img.step(&mut image, &grad),
            Ok(_) => unreachable!("gradient requested"),
            Err(e) => return RestartOutcome::Aborted { step: t, message: e.to_string() },
        }
    }

    match eval(&z_i, &z_k, &image, 3) {
        Ok((total, data, _)) => {
            trace.push((total, data));
            RestartOutcome::Done(RestartRun {
                z_i,
                z_k,
                image: Some(image),
                trace,
                final_total: total,
                final_measurement: data,
            })
        }
        Err(e) => RestartOutcome::Aborted { step: cfg.steps, message: e.to_string() },
    }
}

/// Closest point in the generator range: plain gradient descent on
/// `||i_test - G(z)||^2` from `z ~ N(0, I)`. Returns the final latent and its
/// decode.
pub fn range_project(
    i_test: &Tensor,
    g_i: &GeneratorModel,
    steps: usize,
    step_size: f32,
    seed: u64,
) -> Result<(Tensor, Tensor)> {
    if i_test.shape() != g_i.output_shape() {
        return Err(Error::Shape(format!(
            "range_project: target {:?} does not match decoder output {:?}",
            i_test.shape(),
            g_i.output_shape()
        )));
    }
    let mut r = rng::seeded(rng::derive_seed(seed, &["range-project"]));
    let mut z = sample_gaussian(&mut r, g_i.latent_dim(), 0.0, 1.0);
    for _ in 0..steps {
        let mut tape = Tape::new();
        let target = tape.leaf(i_test.clone());
        let zr = tape.leaf(Tensor::from_vec(z.clone()).with_grad());
        let decoded = g_i.decode_on_tape(&mut tape, zr)?;
        let resid = tape.sub(target, decoded)?;
        let loss = tape.sum_sq(resid);
        if !tape.value(loss).item()?.is_finite() {
            return Err(Error::Solver("range projection diverged (non-finite loss)".into()));
        }
        tape.backward(loss)?;
        let grad = tape.grad(zr).expect("leaf gradient");
        for (zv, g) in z.iter_mut().zip(grad) {
            *zv -= step_size * g;
        }
    }
    let z = Tensor::from_vec(z);
    let projected = g_i.decode(&z)?;
    Ok((z, projected))
}

/// Publication schedule for range projection on 32x32-class images:
/// 6000 steps at 0.01.
pub const RANGE_PROJECT_STEPS_SMALL: (usize, f32) = (6000, 0.01);
/// Publication schedule for 64x64-class images: 10000 steps at 0.001.
pub const RANGE_PROJECT_STEPS_LARGE: (usize, f32) = (10_000, 0.001);
