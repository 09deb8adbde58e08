//! Image-quality metrics: PSNR on a [0, 1] value scale and mean local SSIM
//! with the reference 11x11 Gaussian window (sigma 1.5, K1 0.01, K2 0.03).

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// PSNR reported in place of +inf when the MSE is exactly zero; finite values
/// are also capped here so serialized reports stay comparable.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Quality of one reconstruction against its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub mse: f64,
    /// `||i_test - i_range||`, when a range projection was computed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub range_error: Option<f64>,
}

impl MetricReport {
    pub fn new(reconstruction: &Tensor, truth: &Tensor) -> Result<Self> {
        Ok(MetricReport {
            psnr_db: psnr(reconstruction, truth)?,
            ssim: ssim(reconstruction, truth)?,
            mse: mse(reconstruction, truth)?,
            range_error: None,
        })
    }
}

fn check_same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "metric inputs have shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean squared error over all pixels and channels, in f64.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_same_shape(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2))
        .sum();
    Ok(sum / a.numel() as f64)
}

/// `10 log10(1 / MSE)` for values on the [0, 1] scale, capped at
/// [`PSNR_CAP_DB`] (which also stands in for +inf at zero MSE).
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    let err = mse(a, b)?;
    if err == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / err).log10()).min(PSNR_CAP_DB))
}

/// Luma conversion for 3-channel images (Rec. 601 weights); single-channel
/// images pass through.
fn to_gray(t: &Tensor) -> Result<(Vec<f64>, usize, usize)> {
    let (h, w, c) = t.image_dims()?;
    let data = t.data();
    match c {
        1 => Ok((data.iter().map(|&v| f64::from(v)).collect(), h, w)),
        3 => {
            let gray = (0..h * w)
                .map(|p| {
                    0.299 * f64::from(data[p * 3])
                        + 0.587 * f64::from(data[p * 3 + 1])
                        + 0.114 * f64::from(data[p * 3 + 2])
                })
                .collect();
            Ok((gray, h, w))
        }
        other => Err(Error::Shape(format!("ssim supports 1 or 3 channels, got {other}"))),
    }
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as isize;
    let mut win = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    let mut total = 0.0;
    for r in -half..=half {
        for c in -half..=half {
            let v = (-((r * r + c * c) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            win.push(v);
            total += v;
        }
    }
    for v in win.iter_mut() {
        *v /= total;
    }
    win
}

/// Mean local SSIM over all positions where the full window fits. Dynamic
/// range is fixed at 1.0; color inputs are converted to luma first.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_same_shape(a, b)?;
    let (ga, h, w) = to_gray(a)?;
    let (gb, _, _) = to_gray(b)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let win = gaussian_window();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);

    let mut total = 0.0f64;
    let mut count = 0usize;
    for r0 in 0..=h - SSIM_WINDOW {
        for c0 in 0..=w - SSIM_WINDOW {
            let (mut mu_a, mut mu_b) = (0.0f64, 0.0f64);
            let (mut aa, mut bb, mut ab) = (0.0f64, 0.0f64, 0.0f64);
            let mut wi = 0usize;
            for r in 0..SSIM_WINDOW {
                for c in 0..SSIM_WINDOW {
                    let va = ga[(r0 + r) * w + c0 + c];
                    let vb = gb[(r0 + r) * w + c0 + c];
                    let wgt = win[wi];
                    wi += 1;
                    mu_a += wgt * va;
                    mu_b += wgt * vb;
                    aa += wgt * va * va;
                    bb += wgt * vb * vb;
                    ab += wgt * va * vb;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let value = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            total += value;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Arithmetic means over a batch of reports. Reports at the PSNR cap (the
/// +inf sentinel) are excluded from the PSNR mean and counted separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
    pub count: usize,
    pub psnr_sentinels_excluded: usize,
}

pub fn aggregate(reports: &[MetricReport]) -> Result<MetricSummary> {
    if reports.is_empty() {
        return Err(Error::Usage("aggregate: empty report list".into()));
    }
    let finite: Vec<&MetricReport> = reports.iter().filter(|r| r.psnr_db < PSNR_CAP_DB).collect();
    let sentinels = reports.len() - finite.len();
    let mean_psnr_db = if finite.is_empty() {
        PSNR_CAP_DB
    } else {
        finite.iter().map(|r| r.psnr_db).sum::<f64>() / finite.len() as f64
    };
    let mean_ssim = reports.iter().map(|r| r.ssim).sum::<f64>() / reports.len() as f64;
    Ok(MetricSummary {
        mean_psnr_db,
        mean_ssim,
        count: reports.len(),
        psnr_sentinels_excluded: sentinels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(shape: Vec<usize>, f: impl Fn(usize) -> f32) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(f).collect()).unwrap()
    }

    #[test]
    fn psnr_identical_hits_sentinel() {
        let x = image(vec![16, 16, 1], |i| (i % 13) as f32 / 13.0);
        assert_eq!(psnr(&x, &x).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn psnr_constant_offset_is_twenty_db() {
        let a = image(vec![8, 8, 1], |_| 0.0);
        let b = image(vec![8, 8, 1], |_| 0.1);
        // 0.1 is not exactly representable in f32; the identity holds to the
        // storage precision.
        let p = psnr(&a, &b).unwrap();
        assert!((p - 20.0).abs() < 1e-6, "{p}");
    }

    #[test]
    fn psnr_matches_recomputation() {
        let a = image(vec![12, 12, 1], |i| ((i * 7) % 11) as f32 / 11.0);
        let b = image(vec![12, 12, 1], |i| ((i * 5) % 13) as f32 / 13.0);
        let direct: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2))
            .sum::<f64>()
            / 144.0;
        let expect = 10.0 * (1.0 / direct).log10();
        assert!((psnr(&a, &b).unwrap() - expect).abs() < 1e-6);
    }

    #[test]
    fn ssim_self_is_one() {
        let x = image(vec![16, 16, 1], |i| ((i * 31) % 17) as f32 / 17.0);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_zero_variance_closed_form() {
        // Both images constant: variances vanish, each window evaluates to
        // C1 / (mu_b^2 + C1) = 1e-4 / 0.2501.
        let a = image(vec![16, 16, 1], |_| 0.0);
        let b = image(vec![16, 16, 1], |_| 0.5);
        let expect = 1e-4 / (0.25 + 1e-4);
        assert!((ssim(&a, &b).unwrap() - expect).abs() < 1e-7);
    }

    #[test]
    fn ssim_symmetry_and_bounds() {
        let a = image(vec![14, 14, 1], |i| ((i * 13) % 19) as f32 / 19.0);
        let b = image(vec![14, 14, 1], |i| ((i * 29) % 23) as f32 / 23.0);
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn ssim_rejects_tiny_images() {
        let a = image(vec![8, 8, 1], |_| 0.3);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn luma_conversion_matches_weights() {
        let a = image(vec![12, 12, 3], |i| match i % 3 {
            0 => 0.9,
            1 => 0.2,
            _ => 0.5,
        });
        let (gray, _, _) = to_gray(&a).unwrap();
        let expect = 0.299 * 0.9 + 0.587 * 0.2 + 0.114 * 0.5;
        assert!((gray[0] - expect).abs() < 1e-7);
    }

    #[test]
    fn aggregate_means_and_sentinel_exclusion() {
        let r = |p: f64, s: f64| MetricReport { psnr_db: p, ssim: s, mse: 0.0, range_error: None };
        let single = aggregate(&[r(20.0, 0.5)]).unwrap();
        assert_eq!(single.mean_psnr_db, 20.0);
        assert_eq!(single.mean_ssim, 0.5);

        let two = aggregate(&[r(20.0, 0.4), r(30.0, 0.6)]).unwrap();
        assert!((two.mean_psnr_db - 25.0).abs() < 1e-12);

        let with_inf = aggregate(&[r(20.0, 1.0), r(PSNR_CAP_DB, 1.0)]).unwrap();
        assert_eq!(with_inf.mean_psnr_db, 20.0);
        assert_eq!(with_inf.psnr_sentinels_excluded, 1);

        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn eighty_report_mean_matches_manual_sum() {
        let reports: Vec<MetricReport> = (0..80)
            .map(|i| MetricReport {
                psnr_db: 15.0 + (i as f64) * 0.2,
                ssim: 0.5 + (i as f64) * 0.001,
                mse: 0.0,
                range_error: None,
            })
            .collect();
        let manual_psnr = reports.iter().map(|r| r.psnr_db).sum::<f64>() / 80.0;
        let manual_ssim = reports.iter().map(|r| r.ssim).sum::<f64>() / 80.0;
        let agg = aggregate(&reports).unwrap();
        assert!((agg.mean_psnr_db - manual_psnr).abs() < 1e-12);
        assert!((agg.mean_ssim - manual_ssim).abs() < 1e-12);
    }
}
