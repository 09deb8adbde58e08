//! Experiment runner behind the CLI: mode configs, validation, artifact
//! layout, and seeded dispatch. Every run writes a `manifest.json` (config
//! echo, seed, tool version) before doing any work, so a failed run still
//! leaves enough to reproduce it; all artifacts of a successful run are
//! byte-deterministic given the config and seed.

mod sweep;

pub use sweep::{sweep_blur_length, sweep_noise, Method, SweepConfig, SweepOutput};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::blursynth::{self, Observation};
use crate::error::{Error, Result};
use crate::generators::{self, VaeConfig};
use crate::metrics::MetricReport;
use crate::pngio;
use crate::rng;
use crate::solvers::{self, DdConfig, DdsConfig, SolveResult};
use crate::toyimg;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Where sweep and training images come from: a directory of PNGs (sorted by
/// file name) or seeded procedural generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum ImageSource {
    Dir { path: PathBuf },
    Synthetic { count: usize, size: usize },
}

impl ImageSource {
    /// Load or generate, returning `(id, image)` pairs in deterministic order.
    pub fn load(&self, seed: u64) -> Result<Vec<(String, crate::diffcore::Tensor)>> {
        match self {
            ImageSource::Dir { path } => {
                let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
                    .map_err(|e| Error::io(path, e))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().map(|e| e == "png").unwrap_or(false))
                    .collect();
                entries.sort();
                if entries.is_empty() {
                    return Err(Error::Config(format!(
                        "images.path: no .png files under {}",
                        path.display()
                    )));
                }
                entries
                    .into_iter()
                    .map(|p| {
                        let id = p
                            .file_stem()
                            .map(|s| s.to_string_lossy().into_owned())
                            .unwrap_or_default();
                        Ok((id, pngio::load_image(&p)?))
                    })
                    .collect()
            }
            ImageSource::Synthetic { count, size } => {
                if *count == 0 {
                    return Err(Error::Config("images.count: must be positive".into()));
                }
                Ok(toyimg::generate_toy_images(*count, *size, rng::derive_seed(seed, &["images"]))
                    .into_iter()
                    .enumerate()
                    .map(|(i, t)| (format!("synth-{i:04}"), t))
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenBlursConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub count: usize,
    pub test_fraction: f32,
    pub length_min: f32,
    pub length_max: f32,
    /// Export this many test kernels as 16-bit PNG previews.
    #[serde(default)]
    pub png_previews: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VaeKind {
    Blur,
    Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainVaeConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub kind: VaeKind,
    /// Kernel dataset container (blur VAE).
    pub kernels: Option<PathBuf>,
    /// Image source (image VAE).
    pub images: Option<ImageSource>,
    pub latent_dim: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub epochs: usize,
    /// Gaussian reconstruction noise scale; see `VaeConfig::recon_noise_std`.
    #[serde(default = "default_recon_noise_std")]
    pub recon_noise_std: f32,
}

fn default_recon_noise_std() -> f32 {
    std::f32::consts::FRAC_1_SQRT_2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub image: PathBuf,
    pub image_model: PathBuf,
    pub steps: usize,
    pub step_size: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeblurInput {
    /// Sharp ground-truth image; an observation is simulated from it.
    pub image: Option<PathBuf>,
    /// Pre-blurred observation; no ground truth, metrics omitted.
    pub blurry: Option<PathBuf>,
    /// Kernel dataset to draw the blur from when simulating.
    pub kernels: Option<PathBuf>,
    pub noise_sigma: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeblurDdConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub image_model: PathBuf,
    pub kernel_model: PathBuf,
    pub input: DeblurInput,
    pub solver: DdConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeblurDdsConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub image_model: PathBuf,
    pub kernel_model: PathBuf,
    pub input: DeblurInput,
    pub solver: DdsConfig,
}

/// Top-level experiment description; `mode` selects the variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ExperimentConfig {
    GenBlurs(GenBlursConfig),
    TrainVae(TrainVaeConfig),
    Project(ProjectConfig),
    DeblurDd(DeblurDdConfig),
    DeblurDds(DeblurDdsConfig),
    Sweep(SweepConfig),
}

impl ExperimentConfig {
    pub fn out_dir(&self) -> &Path {
        match self {
            ExperimentConfig::GenBlurs(c) => &c.out_dir,
            ExperimentConfig::TrainVae(c) => &c.out_dir,
            ExperimentConfig::Project(c) => &c.out_dir,
            ExperimentConfig::DeblurDd(c) => &c.out_dir,
            ExperimentConfig::DeblurDds(c) => &c.out_dir,
            ExperimentConfig::Sweep(c) => &c.out_dir,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ExperimentConfig::GenBlurs(c) => {
                if c.count == 0 {
                    return Err(Error::Config("count: must be positive".into()));
                }
                if !(0.0..=1.0).contains(&c.test_fraction) {
                    return Err(Error::Config("test_fraction: must lie in [0, 1]".into()));
                }
                if c.length_min > c.length_max {
                    return Err(Error::Config("length_min: exceeds length_max".into()));
                }
            }
            ExperimentConfig::TrainVae(c) => {
                match c.kind {
                    VaeKind::Blur => {
                        let path = c.kernels.as_ref().ok_or_else(|| {
                            Error::Config("kernels: required for a blur VAE".into())
                        })?;
                        exists(path, "kernels")?;
                    }
                    VaeKind::Image => {
                        let source = c.images.as_ref().ok_or_else(|| {
                            Error::Config("images: required for an image VAE".into())
                        })?;
                        if let ImageSource::Dir { path } = source {
                            exists(path, "images.path")?;
                        }
                    }
                }
                let vae = VaeConfig {
                    latent_dim: c.latent_dim,
                    batch_size: c.batch_size,
                    learning_rate: c.learning_rate,
                    epochs: c.epochs,
                    seed: c.seed,
                    recon_noise_std: c.recon_noise_std,
                };
                vae.validate()?;
            }
            ExperimentConfig::Project(c) => {
                exists(&c.image, "image")?;
                if !(c.step_size > 0.0) {
                    return Err(Error::Config("step_size: must be positive".into()));
                }
            }
            ExperimentConfig::DeblurDd(c) => {
                validate_input(&c.input)?;
                c.solver.validate()?;
            }
            ExperimentConfig::DeblurDds(c) => {
                validate_input(&c.input)?;
                c.solver.validate()?;
            }
            ExperimentConfig::Sweep(c) => c.validate()?,
        }
        Ok(())
    }
}

fn exists(path: &Path, field: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{field}: {} does not exist", path.display())))
    }
}

fn validate_input(input: &DeblurInput) -> Result<()> {
    match (&input.image, &input.blurry) {
        (Some(_), Some(_)) => {
            return Err(Error::Config("input: image and blurry are mutually exclusive".into()))
        }
        (None, None) => {
            return Err(Error::Config("input: one of image or blurry is required".into()))
        }
        (Some(p), None) => {
            exists(p, "input.image")?;
            if input.kernels.is_none() {
                return Err(Error::Config("input.kernels: required to simulate a blur".into()));
            }
            exists(input.kernels.as_ref().expect("checked"), "input.kernels")?;
        }
        (None, Some(p)) => exists(p, "input.blurry")?,
    }
    if input.noise_sigma < 0.0 {
        return Err(Error::Config("input.noise_sigma: must be nonnegative".into()));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    tool_version: &'a str,
    config: &'a ExperimentConfig,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Validate, write the run manifest, then dispatch. The manifest lands before
/// any work so failed runs remain reproducible.
pub fn run(config: &ExperimentConfig) -> Result<()> {
    config.validate()?;
    let out_dir = config.out_dir();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_json(
        &out_dir.join("manifest.json"),
        &RunManifest { tool_version: TOOL_VERSION, config },
    )?;
    match config {
        ExperimentConfig::GenBlurs(c) => run_gen_blurs(c),
        ExperimentConfig::TrainVae(c) => run_train_vae(c),
        ExperimentConfig::Project(c) => run_project(c),
        ExperimentConfig::DeblurDd(c) => {
            let (obs, truth_image) = prepare_observation(&c.input, c.seed)?;
            let g_i = generators::load_model(&c.image_model)?;
            let g_k = generators::load_model(&c.kernel_model)?;
            let mut solver = c.solver.clone();
            solver.seed = rng::derive_seed(c.seed, &["solver", "dd"]);
            let result = solvers::deep_deblur(&obs, &g_i, &g_k, &solver)?;
            write_deblur_artifacts(&c.out_dir, &obs, &result, truth_image.as_ref())
        }
        ExperimentConfig::DeblurDds(c) => {
            let (obs, truth_image) = prepare_observation(&c.input, c.seed)?;
            let g_i = generators::load_model(&c.image_model)?;
            let g_k = generators::load_model(&c.kernel_model)?;
            let mut solver = c.solver.clone();
            solver.seed = rng::derive_seed(c.seed, &["solver", "dds"]);
            let result = solvers::deep_deblur_slack(&obs, &g_i, &g_k, &solver)?;
            write_deblur_artifacts(&c.out_dir, &obs, &result, truth_image.as_ref())
        }
        ExperimentConfig::Sweep(c) => sweep::run_sweep(c),
    }
}

fn run_gen_blurs(c: &GenBlursConfig) -> Result<()> {
    let (train, test) = blursynth::generate_blur_dataset(
        c.count,
        (c.length_min, c.length_max),
        c.test_fraction,
        c.seed,
    )?;
    blursynth::save_kernel_dataset(&c.out_dir.join("kernels_train.gbd"), &train)?;
    blursynth::save_kernel_dataset(&c.out_dir.join("kernels_test.gbd"), &test)?;
    for (i, kernel) in test.iter().take(c.png_previews).enumerate() {
        pngio::save_kernel_png(&c.out_dir.join(format!("kernel_{i:04}.png")), kernel.canvas())?;
    }
    #[derive(Serialize)]
    struct Summary {
        train_count: usize,
        test_count: usize,
        length_min: f32,
        length_max: f32,
    }
    write_json(
        &c.out_dir.join("dataset.json"),
        &Summary {
            train_count: train.len(),
            test_count: test.len(),
            length_min: c.length_min,
            length_max: c.length_max,
        },
    )
}

fn run_train_vae(c: &TrainVaeConfig) -> Result<()> {
    let vae_cfg = VaeConfig {
        latent_dim: c.latent_dim,
        batch_size: c.batch_size,
        learning_rate: c.learning_rate,
        epochs: c.epochs,
        seed: rng::derive_seed(c.seed, &["train-vae"]),
        recon_noise_std: c.recon_noise_std,
    };
    let (decoder, report) = match c.kind {
        VaeKind::Blur => {
            let kernels = blursynth::load_kernel_dataset(c.kernels.as_ref().expect("validated"))?;
            let dataset: Vec<_> = kernels
                .iter()
                .map(|k| {
                    k.canvas()
                        .clone()
                        .reshaped(vec![blursynth::KERNEL_CANVAS, blursynth::KERNEL_CANVAS, 1])
                        .expect("canvas reshape")
                })
                .collect();
            generators::train_blur_vae(&dataset, &vae_cfg)?
        }
        VaeKind::Image => {
            let images = c.images.as_ref().expect("validated").load(c.seed)?;
            let size = images[0].1.shape()[0];
            let dataset: Vec<_> = images.into_iter().map(|(_, t)| t).collect();
            let mut arch = generators::toy_image_vae_arch(size, c.latent_dim);
            arch.latent_dim = c.latent_dim;
            generators::train_vae(&dataset, &vae_cfg, &arch)?
        }
    };
    generators::save_model(&decoder, &c.out_dir.join("model.gbm"))?;

    let mut csv = String::from("step,elbo\n");
    for (step, elbo) in report.elbo_trace.iter().enumerate() {
        csv.push_str(&format!("{step},{elbo}\n"));
    }
    std::fs::write(c.out_dir.join("training.csv"), csv)
        .map_err(|e| Error::io(c.out_dir.join("training.csv"), e))?;

    #[derive(Serialize)]
    struct Summary {
        steps: usize,
        final_recon_mse: f32,
        mean_image_mse: f32,
    }
    write_json(
        &c.out_dir.join("training.json"),
        &Summary {
            steps: report.steps,
            final_recon_mse: report.final_recon_mse,
            mean_image_mse: report.mean_image_mse,
        },
    )
}

fn run_project(c: &ProjectConfig) -> Result<()> {
    let target = pngio::load_image(&c.image)?;
    let g_i = generators::load_model(&c.image_model)?;
    let (z, projected) = solvers::range_project(
        &target,
        &g_i,
        c.steps,
        c.step_size,
        rng::derive_seed(c.seed, &["project"]),
    )?;
    pngio::save_image(&c.out_dir.join("i_range.png"), &projected)?;

    let range_error = target
        .data()
        .iter()
        .zip(projected.data())
        .map(|(a, b)| (f64::from(*a) - f64::from(*b)).powi(2))
        .sum::<f64>()
        .sqrt();
    let mut report = MetricReport::new(&projected, &target)?;
    report.range_error = Some(range_error);
    #[derive(Serialize)]
    struct ProjectRecord {
        latent: Vec<f32>,
        metrics: MetricReport,
    }
    write_json(
        &c.out_dir.join("result.json"),
        &ProjectRecord { latent: z.data().to_vec(), metrics: report },
    )
}

/// Build the observation for a deblur run: either simulate from a sharp
/// image and a seeded test kernel, or wrap a supplied blurry PNG.
fn prepare_observation(
    input: &DeblurInput,
    seed: u64,
) -> Result<(Observation, Option<crate::diffcore::Tensor>)> {
    match (&input.image, &input.blurry) {
        (Some(sharp_path), None) => {
            let sharp = pngio::load_image(sharp_path)?;
            let kernels =
                blursynth::load_kernel_dataset(input.kernels.as_ref().expect("validated"))?;
            if kernels.is_empty() {
                return Err(Error::Config("input.kernels: dataset is empty".into()));
            }
            let pick = (rng::derive_seed(seed, &["pick-kernel"]) % kernels.len() as u64) as usize;
            let obs = blursynth::simulate_observation(
                &sharp,
                &kernels[pick],
                input.noise_sigma,
                rng::derive_seed(seed, &["observe"]),
            )?;
            Ok((obs, Some(sharp)))
        }
        (None, Some(blurry_path)) => {
            let y = pngio::load_image(blurry_path)?;
            Ok((Observation::from_raw(y), None))
        }
        _ => unreachable!("validated"),
    }
}

/// Serializable slice of a solve for the JSON record.
#[derive(Debug, Serialize)]
struct SolveRecord {
    chosen_restart: usize,
    final_total_loss: f32,
    final_measurement_loss: f32,
    restarts: Vec<solvers::RestartSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<MetricReport>,
}

fn write_deblur_artifacts(
    out_dir: &Path,
    obs: &Observation,
    result: &SolveResult,
    truth: Option<&crate::diffcore::Tensor>,
) -> Result<()> {
    pngio::save_image(&out_dir.join("y.png"), &obs.y_clipped)?;
    pngio::save_image(&out_dir.join("i_hat.png"), &result.i_hat)?;
    let k2d = result
        .k_hat
        .clone()
        .reshaped(result.k_hat.shape()[..2].to_vec())
        .unwrap_or_else(|_| result.k_hat.clone());
    pngio::save_kernel_png(&out_dir.join("k_hat.png"), &k2d)?;

    let mut csv = String::from("step,total_loss,measurement_loss\n");
    for (step, (total, meas)) in result.loss_trace.iter().enumerate() {
        csv.push_str(&format!("{step},{total},{meas}\n"));
    }
    std::fs::write(out_dir.join("trace.csv"), csv)
        .map_err(|e| Error::io(out_dir.join("trace.csv"), e))?;

    let report = match truth {
        Some(t) => Some(MetricReport::new(&result.i_hat, t)?),
        None => None,
    };
    let record = SolveRecord {
        chosen_restart: result.chosen_restart,
        final_total_loss: result.loss_trace.last().map(|&(t, _)| t).unwrap_or(f32::NAN),
        final_measurement_loss: result.final_measurement_loss(),
        restarts: result.restart_summaries.clone(),
        metrics: report,
    };
    write_json(&out_dir.join("result.json"), &record)
}
