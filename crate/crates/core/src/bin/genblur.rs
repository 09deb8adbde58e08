//! Command-line front end: dataset generation, VAE training, range
//! projection, single-image deblurring, and sweep experiments.
//!
//! Every flag can also come from a JSON config file (`--config`); flags given
//! on the command line override the file. Exit codes: 0 success, 2 config
//! validation, 3 I/O, 4 solver failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use genblur::error::{Error, Result};
use genblur::harness::{
    self, DeblurDdConfig, DeblurDdsConfig, DeblurInput, ExperimentConfig, GenBlursConfig,
    ImageSource, Method, ProjectConfig, SweepConfig, TrainVaeConfig, VaeKind,
};
use genblur::solvers::{DdConfig, DdsConfig};

#[derive(Parser)]
#[command(name = "genblur", version, about = "Blind image deblurring under generative priors")]
struct Cli {
    /// JSON experiment config; command-line flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a motion-blur kernel dataset (train/test split).
    GenBlurs(GenBlursArgs),
    /// Train a VAE and export its decoder as a generator model.
    TrainVae(TrainVaeArgs),
    /// Project an image onto a generator's range.
    Project(ProjectArgs),
    /// Deblur by alternating latent descent.
    DeblurDd(DeblurArgs),
    /// Deblur with the slack objective (free image + range tie + TV).
    DeblurDds(DeblurDdsArgs),
    /// Noise and/or blur-length sweep over an image set.
    Sweep(SweepArgs),
}

#[derive(Args, Default)]
struct GenBlursArgs {
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    test_fraction: Option<f32>,
    #[arg(long)]
    length_min: Option<f32>,
    #[arg(long)]
    length_max: Option<f32>,
    /// Also write this many test kernels as PNG previews.
    #[arg(long)]
    png_previews: Option<usize>,
}

#[derive(Args, Default)]
struct TrainVaeArgs {
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// blur (kernel VAE) or image.
    #[arg(long, value_parser = parse_vae_kind)]
    kind: Option<VaeKind>,
    /// Kernel dataset container (blur VAE input).
    #[arg(long)]
    kernels: Option<PathBuf>,
    /// Directory of training PNGs (image VAE input).
    #[arg(long)]
    images: Option<PathBuf>,
    /// Procedurally generate this many training images instead.
    #[arg(long, conflicts_with = "images")]
    synth_images: Option<usize>,
    /// Side of synthetic images.
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f32>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Gaussian reconstruction noise scale of the ELBO.
    #[arg(long)]
    recon_noise_std: Option<f32>,
}

#[derive(Args, Default)]
struct ProjectArgs {
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Target image (PNG).
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    image_model: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    step_size: Option<f32>,
}

#[derive(Args, Default)]
struct DeblurCommonArgs {
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    image_model: Option<PathBuf>,
    #[arg(long)]
    kernel_model: Option<PathBuf>,
    /// Sharp ground-truth image; the observation is simulated from it.
    #[arg(long)]
    image: Option<PathBuf>,
    /// Pre-blurred observation (no ground truth).
    #[arg(long, conflicts_with = "image")]
    blurry: Option<PathBuf>,
    /// Kernel dataset to draw the simulated blur from.
    #[arg(long)]
    kernels: Option<PathBuf>,
    #[arg(long)]
    noise_sigma: Option<f32>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
}

#[derive(Args, Default)]
struct DeblurArgs {
    #[command(flatten)]
    common: DeblurCommonArgs,
    #[arg(long)]
    gamma: Option<f32>,
    #[arg(long)]
    lambda: Option<f32>,
    #[arg(long)]
    step_size: Option<f32>,
    #[arg(long)]
    decay_steps: Option<f32>,
}

#[derive(Args, Default)]
struct DeblurDdsArgs {
    #[command(flatten)]
    common: DeblurCommonArgs,
    #[arg(long)]
    tau: Option<f32>,
    #[arg(long)]
    zeta: Option<f32>,
    #[arg(long)]
    rho: Option<f32>,
    #[arg(long)]
    adam_lr: Option<f32>,
}

#[derive(Args, Default)]
struct SweepArgs {
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory of PNGs to sweep over.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Procedurally generate this many sweep images instead.
    #[arg(long, conflicts_with = "images")]
    synth_images: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    image_model: Option<PathBuf>,
    #[arg(long)]
    kernel_model: Option<PathBuf>,
    #[arg(long)]
    kernels: Option<PathBuf>,
    /// Comma-separated: dd,dds.
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Option<Vec<Method>>,
    /// Noise sweep axis, comma-separated sigmas.
    #[arg(long, value_delimiter = ',')]
    sigmas: Option<Vec<f32>>,
    /// Blur-length sweep axis, comma-separated lengths.
    #[arg(long, value_delimiter = ',')]
    lengths: Option<Vec<f32>>,
    /// Noise level for the blur-length sweep.
    #[arg(long)]
    base_sigma: Option<f32>,
    /// Iterations for both solvers.
    #[arg(long)]
    steps: Option<usize>,
    /// Restarts for both solvers.
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    gamma: Option<f32>,
    #[arg(long)]
    lambda: Option<f32>,
    #[arg(long)]
    dd_step_size: Option<f32>,
    #[arg(long)]
    tau: Option<f32>,
    #[arg(long)]
    zeta: Option<f32>,
    #[arg(long)]
    rho: Option<f32>,
    #[arg(long)]
    dds_adam_lr: Option<f32>,
}

fn parse_vae_kind(s: &str) -> std::result::Result<VaeKind, String> {
    match s {
        "blur" => Ok(VaeKind::Blur),
        "image" => Ok(VaeKind::Image),
        other => Err(format!("unknown VAE kind {other:?} (expected blur or image)")),
    }
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    match s {
        "dd" => Ok(Method::Dd),
        "dds" => Ok(Method::Dds),
        other => Err(format!("unknown method {other:?} (expected dd or dds)")),
    }
}

fn load_config_file(path: &PathBuf) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("config file {}: {e}", path.display())))
}

fn require<T>(value: Option<T>, field: &str) -> Result<T> {
    value.ok_or_else(|| Error::Config(format!("{field}: required (flag or config file)")))
}

fn wrong_mode(expected: &str) -> Error {
    Error::Config(format!("config file mode does not match the {expected} subcommand"))
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn image_source(
    dir: Option<PathBuf>,
    synth: Option<usize>,
    size: Option<usize>,
) -> Option<ImageSource> {
    match (dir, synth) {
        (Some(path), None) => Some(ImageSource::Dir { path }),
        (None, Some(count)) => Some(ImageSource::Synthetic { count, size: size.unwrap_or(28) }),
        _ => None,
    }
}

fn build_config(cli: Cli) -> Result<ExperimentConfig> {
    let file = cli.config.as_ref().map(load_config_file).transpose()?;
    match cli.command {
        Command::GenBlurs(args) => {
            let mut c = match file {
                Some(ExperimentConfig::GenBlurs(c)) => c,
                Some(_) => return Err(wrong_mode("gen-blurs")),
                None => GenBlursConfig {
                    out_dir: require(args.out_dir.clone(), "out_dir")?,
                    seed: 0,
                    count: 1000,
                    test_fraction: 0.25,
                    length_min: genblur::blursynth::LENGTH_RANGE.0,
                    length_max: genblur::blursynth::LENGTH_RANGE.1,
                    png_previews: 0,
                },
            };
            set(&mut c.out_dir, args.out_dir);
            set(&mut c.seed, args.seed);
            set(&mut c.count, args.count);
            set(&mut c.test_fraction, args.test_fraction);
            set(&mut c.length_min, args.length_min);
            set(&mut c.length_max, args.length_max);
            set(&mut c.png_previews, args.png_previews);
            Ok(ExperimentConfig::GenBlurs(c))
        }
        Command::TrainVae(args) => {
            let mut c = match file {
                Some(ExperimentConfig::TrainVae(c)) => c,
                Some(_) => return Err(wrong_mode("train-vae")),
                None => {
                    let kind = require(args.kind, "kind")?;
                    TrainVaeConfig {
                        out_dir: require(args.out_dir.clone(), "out_dir")?,
                        seed: 0,
                        kind,
                        kernels: None,
                        images: None,
                        latent_dim: match kind {
                            VaeKind::Blur => 50,
                            VaeKind::Image => 16,
                        },
                        batch_size: 8,
                        learning_rate: 1e-3,
                        epochs: 10,
                        recon_noise_std: match kind {
                            VaeKind::Blur => 0.01,
                            VaeKind::Image => 0.1,
                        },
                    }
                }
            };
            set(&mut c.out_dir, args.out_dir);
            set(&mut c.seed, args.seed);
            set(&mut c.kind, args.kind);
            if args.kernels.is_some() {
                c.kernels = args.kernels;
            }
            if let Some(src) = image_source(args.images, args.synth_images, args.image_size) {
                c.images = Some(src);
            }
            set(&mut c.latent_dim, args.latent_dim);
            set(&mut c.batch_size, args.batch_size);
            set(&mut c.learning_rate, args.learning_rate);
            set(&mut c.epochs, args.epochs);
            set(&mut c.recon_noise_std, args.recon_noise_std);
            Ok(ExperimentConfig::TrainVae(c))
        }
        Command::Project(args) => {
            let mut c = match file {
                Some(ExperimentConfig::Project(c)) => c,
                Some(_) => return Err(wrong_mode("project")),
                None => ProjectConfig {
                    out_dir: require(args.out_dir.clone(), "out_dir")?,
                    seed: 0,
                    image: require(args.image.clone(), "image")?,
                    image_model: require(args.image_model.clone(), "image_model")?,
                    steps: genblur::solvers::RANGE_PROJECT_STEPS_SMALL.0,
                    step_size: genblur::solvers::RANGE_PROJECT_STEPS_SMALL.1,
                },
            };
            set(&mut c.out_dir, args.out_dir);
            set(&mut c.seed, args.seed);
            set(&mut c.image, args.image);
            set(&mut c.image_model, args.image_model);
            set(&mut c.steps, args.steps);
            set(&mut c.step_size, args.step_size);
            Ok(ExperimentConfig::Project(c))
        }
        Command::DeblurDd(args) => {
            let mut c = match file {
                Some(ExperimentConfig::DeblurDd(c)) => c,
                Some(_) => return Err(wrong_mode("deblur-dd")),
                None => DeblurDdConfig {
                    out_dir: require(args.common.out_dir.clone(), "out_dir")?,
                    seed: 0,
                    image_model: require(args.common.image_model.clone(), "image_model")?,
                    kernel_model: require(args.common.kernel_model.clone(), "kernel_model")?,
                    input: DeblurInput {
                        image: None,
                        blurry: None,
                        kernels: None,
                        noise_sigma: 0.01,
                    },
                    solver: DdConfig::default(),
                },
            };
            apply_common(
                &mut c.out_dir,
                &mut c.seed,
                &mut c.image_model,
                &mut c.kernel_model,
                &mut c.input,
                &args.common,
            );
            set(&mut c.solver.steps, args.common.steps);
            set(&mut c.solver.restarts, args.common.restarts);
            set(&mut c.solver.gamma, args.gamma);
            set(&mut c.solver.lambda, args.lambda);
            set(&mut c.solver.step_size, args.step_size);
            set(&mut c.solver.decay_steps, args.decay_steps);
            Ok(ExperimentConfig::DeblurDd(c))
        }
        Command::DeblurDds(args) => {
            let mut c = match file {
                Some(ExperimentConfig::DeblurDds(c)) => c,
                Some(_) => return Err(wrong_mode("deblur-dds")),
                None => DeblurDdsConfig {
                    out_dir: require(args.common.out_dir.clone(), "out_dir")?,
                    seed: 0,
                    image_model: require(args.common.image_model.clone(), "image_model")?,
                    kernel_model: require(args.common.kernel_model.clone(), "kernel_model")?,
                    input: DeblurInput {
                        image: None,
                        blurry: None,
                        kernels: None,
                        noise_sigma: 0.01,
                    },
                    solver: DdsConfig::default(),
                },
            };
            apply_common(
                &mut c.out_dir,
                &mut c.seed,
                &mut c.image_model,
                &mut c.kernel_model,
                &mut c.input,
                &args.common,
            );
            set(&mut c.solver.steps, args.common.steps);
            set(&mut c.solver.restarts, args.common.restarts);
            set(&mut c.solver.tau, args.tau);
            set(&mut c.solver.zeta, args.zeta);
            set(&mut c.solver.rho, args.rho);
            set(&mut c.solver.adam_lr, args.adam_lr);
            Ok(ExperimentConfig::DeblurDds(c))
        }
        Command::Sweep(args) => {
            let mut c = match file {
                Some(ExperimentConfig::Sweep(c)) => c,
                Some(_) => return Err(wrong_mode("sweep")),
                None => SweepConfig {
                    out_dir: require(args.out_dir.clone(), "out_dir")?,
                    seed: 0,
                    images: require(
                        image_source(args.images.clone(), args.synth_images, args.image_size),
                        "images/synth_images",
                    )?,
                    image_model: require(args.image_model.clone(), "image_model")?,
                    kernel_model: require(args.kernel_model.clone(), "kernel_model")?,
                    kernels: None,
                    methods: vec![Method::Dd],
                    sigmas: vec![],
                    lengths: vec![],
                    base_sigma: 0.01,
                    dd: DdConfig::default(),
                    dds: DdsConfig::default(),
                },
            };
            set(&mut c.out_dir, args.out_dir);
            set(&mut c.seed, args.seed);
            if let Some(src) = image_source(args.images, args.synth_images, args.image_size) {
                c.images = src;
            }
            set(&mut c.image_model, args.image_model);
            set(&mut c.kernel_model, args.kernel_model);
            if args.kernels.is_some() {
                c.kernels = args.kernels;
            }
            set(&mut c.methods, args.methods);
            set(&mut c.sigmas, args.sigmas);
            set(&mut c.lengths, args.lengths);
            set(&mut c.base_sigma, args.base_sigma);
            if let Some(steps) = args.steps {
                c.dd.steps = steps;
                c.dds.steps = steps;
            }
            if let Some(restarts) = args.restarts {
                c.dd.restarts = restarts;
                c.dds.restarts = restarts;
            }
            set(&mut c.dd.gamma, args.gamma);
            set(&mut c.dd.lambda, args.lambda);
            set(&mut c.dd.step_size, args.dd_step_size);
            set(&mut c.dds.tau, args.tau);
            set(&mut c.dds.zeta, args.zeta);
            set(&mut c.dds.rho, args.rho);
            set(&mut c.dds.adam_lr, args.dds_adam_lr);
            Ok(ExperimentConfig::Sweep(c))
        }
    }
}

fn apply_common(
    out_dir: &mut PathBuf,
    seed: &mut u64,
    image_model: &mut PathBuf,
    kernel_model: &mut PathBuf,
    input: &mut DeblurInput,
    args: &DeblurCommonArgs,
) {
    set(out_dir, args.out_dir.clone());
    set(seed, args.seed);
    set(image_model, args.image_model.clone());
    set(kernel_model, args.kernel_model.clone());
    if args.image.is_some() {
        input.image = args.image.clone();
        input.blurry = None;
    }
    if args.blurry.is_some() {
        input.blurry = args.blurry.clone();
        input.image = None;
    }
    if args.kernels.is_some() {
        input.kernels = args.kernels.clone();
    }
    set(&mut input.noise_sigma, args.noise_sigma);
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match build_config(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("genblur: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match harness::run(&config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("genblur: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
