//! Noise and blur-length sweeps. Each cell (image x axis value x method) is
//! an independent seeded task; cells run on a bounded worker pool and results
//! merge single-threaded in a fixed order, so output bytes do not depend on
//! scheduling.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blursynth::{self, BlurKernel};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::generators::{self, GeneratorModel};
use crate::metrics::{self, MetricReport};
use crate::rng;
use crate::solvers::{self, DdConfig, DdsConfig};

use super::ImageSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Dd,
    Dds,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Dd => "dd",
            Method::Dds => "dds",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub images: ImageSource,
    pub image_model: PathBuf,
    pub kernel_model: PathBuf,
    /// Test kernel dataset; required for the noise sweep.
    pub kernels: Option<PathBuf>,
    pub methods: Vec<Method>,
    /// Noise sweep axis (sigma values).
    #[serde(default)]
    pub sigmas: Vec<f32>,
    /// Blur-length sweep axis (kernels synthesized per length).
    #[serde(default)]
    pub lengths: Vec<f32>,
    /// Noise level used by the blur-length sweep.
    pub base_sigma: f32,
    pub dd: DdConfig,
    pub dds: DdsConfig,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() && self.lengths.is_empty() {
            return Err(Error::Config("sigmas/lengths: sweep needs at least one axis".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods: at least one of dd, dds".into()));
        }
        if self.sigmas.iter().any(|s| *s < 0.0) || self.base_sigma < 0.0 {
            return Err(Error::Config("sigmas: must be nonnegative".into()));
        }
        if !self.sigmas.is_empty() && self.kernels.is_none() {
            return Err(Error::Config("kernels: required for a noise sweep".into()));
        }
        if let Some(k) = &self.kernels {
            if !k.exists() {
                return Err(Error::Config(format!("kernels: {} does not exist", k.display())));
            }
        }
        if let ImageSource::Dir { path } = &self.images {
            if !path.exists() {
                return Err(Error::Config(format!("images.path: {} does not exist", path.display())));
            }
        }
        self.dd.validate()?;
        self.dds.validate()?;
        Ok(())
    }
}

/// One result row; columns mirror the metrics CSV contract.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub image_id: String,
    pub method: &'static str,
    pub noise_sigma: f32,
    pub blur_length: f32,
    pub psnr_db: f64,
    pub ssim: f64,
    pub range_error: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub axis: f32,
    pub method: &'static str,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

#[derive(Debug)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SummaryRow>,
}

enum Axis {
    Noise,
    BlurLength,
}

struct Cell<'a> {
    image_id: &'a str,
    image: &'a Tensor,
    method: Method,
    axis_value: f32,
}

fn cell_seed(global: u64, cell: &Cell<'_>, axis: &Axis) -> u64 {
    let axis_kind = match axis {
        Axis::Noise => "noise",
        Axis::BlurLength => "blur-length",
    };
    rng::derive_seed(
        global,
        &["cell", cell.image_id, cell.method.name(), axis_kind, &cell.axis_value.to_string()],
    )
}

/// Mean PSNR/SSIM of each method at each noise level over the image set.
/// Kernels are drawn per cell from the supplied test set.
pub fn sweep_noise(
    images: &[(String, Tensor)],
    kernels: &[BlurKernel],
    g_i: &GeneratorModel,
    g_k: &GeneratorModel,
    cfg: &SweepConfig,
) -> Result<SweepOutput> {
    if kernels.is_empty() {
        return Err(Error::Config("kernels: dataset is empty".into()));
    }
    run_axis(images, g_i, g_k, cfg, &cfg.sigmas, Axis::Noise, |cell, seed| {
        let pick = (rng::derive_seed(seed, &["pick-kernel"]) % kernels.len() as u64) as usize;
        Ok((kernels[pick].clone(), cell.axis_value))
    })
}

/// Mean PSNR/SSIM of each method at each blur length; kernels are freshly
/// synthesized per cell at the requested length, noise fixed at `base_sigma`.
pub fn sweep_blur_length(
    images: &[(String, Tensor)],
    g_i: &GeneratorModel,
    g_k: &GeneratorModel,
    cfg: &SweepConfig,
) -> Result<SweepOutput> {
    run_axis(images, g_i, g_k, cfg, &cfg.lengths, Axis::BlurLength, |cell, seed| {
        let trajectory =
            blursynth::random_trajectory(cell.axis_value, rng::derive_seed(seed, &["trajectory"]))?;
        Ok((blursynth::rasterize(&trajectory)?, cfg.base_sigma))
    })
}

fn run_axis<'a, F>(
    images: &'a [(String, Tensor)],
    g_i: &GeneratorModel,
    g_k: &GeneratorModel,
    cfg: &SweepConfig,
    axis_values: &[f32],
    axis: Axis,
    kernel_for: F,
) -> Result<SweepOutput>
where
    F: Fn(&Cell<'a>, u64) -> Result<(BlurKernel, f32)> + Sync,
{
    let mut cells = Vec::new();
    for &axis_value in axis_values {
        for (image_id, image) in images {
            for &method in &cfg.methods {
                cells.push(Cell { image_id, image, method, axis_value });
            }
        }
    }

    let results: Vec<Result<SweepRow>> = cells
        .par_iter()
        .map(|cell| {
            let seed = cell_seed(cfg.seed, cell, &axis);
            let (kernel, sigma) = kernel_for(cell, seed)?;
            let obs = blursynth::simulate_observation(
                cell.image,
                &kernel,
                sigma,
                rng::derive_seed(seed, &["observe"]),
            )?;
            let result = match cell.method {
                Method::Dd => {
                    let solver = DdConfig { seed: rng::derive_seed(seed, &["dd"]), ..cfg.dd.clone() };
                    solvers::deep_deblur(&obs, g_i, g_k, &solver)?
                }
                Method::Dds => {
                    let solver =
                        DdsConfig { seed: rng::derive_seed(seed, &["dds"]), ..cfg.dds.clone() };
                    solvers::deep_deblur_slack(&obs, g_i, g_k, &solver)?
                }
            };
            let report = MetricReport::new(&result.i_hat, cell.image)?;
            Ok(SweepRow {
                image_id: cell.image_id.to_string(),
                method: cell.method.name(),
                noise_sigma: sigma,
                blur_length: kernel.length(),
                psnr_db: report.psnr_db,
                ssim: report.ssim,
                range_error: None,
                seed,
            })
        })
        .collect();

    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        rows.push(r?);
    }

    let mut summary = Vec::new();
    for &axis_value in axis_values {
        for &method in &cfg.methods {
            let group: Vec<MetricReport> = rows
                .iter()
                .zip(&cells)
                .filter(|(_, c)| c.axis_value == axis_value && c.method == method)
                .map(|(r, _)| MetricReport {
                    psnr_db: r.psnr_db,
                    ssim: r.ssim,
                    mse: 0.0,
                    range_error: None,
                })
                .collect();
            let agg = metrics::aggregate(&group)?;
            summary.push(SummaryRow {
                axis: axis_value,
                method: method.name(),
                mean_psnr: agg.mean_psnr_db,
                mean_ssim: agg.mean_ssim,
            });
        }
    }
    Ok(SweepOutput { rows, summary })
}

fn write_rows_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut csv =
        String::from("image_id,method,noise_sigma,blur_length,psnr_db,ssim,range_error,seed\n");
    for r in rows {
        let range = r.range_error.map(|v| v.to_string()).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.image_id, r.method, r.noise_sigma, r.blur_length, r.psnr_db, r.ssim, range, r.seed
        ));
    }
    std::fs::write(path, csv).map_err(|e| Error::io(path, e))
}

fn write_summary_csv(path: &Path, axis_name: &str, rows: &[SummaryRow]) -> Result<()> {
    let mut csv = format!("{axis_name},method,mean_psnr,mean_ssim\n");
    for r in rows {
        csv.push_str(&format!("{},{},{},{}\n", r.axis, r.method, r.mean_psnr, r.mean_ssim));
    }
    std::fs::write(path, csv).map_err(|e| Error::io(path, e))
}

pub(super) fn run_sweep(cfg: &SweepConfig) -> Result<()> {
    let images = cfg.images.load(cfg.seed)?;
    let g_i = generators::load_model(&cfg.image_model)?;
    let g_k = generators::load_model(&cfg.kernel_model)?;

    if !cfg.sigmas.is_empty() {
        let kernels = blursynth::load_kernel_dataset(cfg.kernels.as_ref().expect("validated"))?;
        let output = sweep_noise(&images, &kernels, &g_i, &g_k, cfg)?;
        write_rows_csv(&cfg.out_dir.join("noise_rows.csv"), &output.rows)?;
        write_summary_csv(&cfg.out_dir.join("noise_summary.csv"), "sigma", &output.summary)?;
    }
    if !cfg.lengths.is_empty() {
        let output = sweep_blur_length(&images, &g_i, &g_k, cfg)?;
        write_rows_csv(&cfg.out_dir.join("blur_rows.csv"), &output.rows)?;
        write_summary_csv(&cfg.out_dir.join("blur_summary.csv"), "blur_length", &output.summary)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_config_validation() {
        let cfg = SweepConfig {
            out_dir: "/tmp/s".into(),
            seed: 1,
            images: ImageSource::Synthetic { count: 2, size: 28 },
            image_model: "/missing.gbm".into(),
            kernel_model: "/missing.gbm".into(),
            kernels: None,
            methods: vec![Method::Dd],
            sigmas: vec![],
            lengths: vec![],
            base_sigma: 0.01,
            dd: DdConfig::default(),
            dds: DdsConfig::default(),
        };
        match cfg.validate() {
            Err(Error::Config(msg)) => assert!(msg.contains("axis"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }
}
