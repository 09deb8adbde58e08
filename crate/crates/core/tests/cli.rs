//! End-to-end checks of the command-line interface: exit codes, config-file
//! override behavior, artifact layout, and byte-level determinism of
//! repeated runs.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;

use genblur::generators::save_model;
use genblur::pngio;
use genblur::toyimg;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_genblur")
}

fn fresh_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("genblur-cli-tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Toy models on disk: a 28x28 image decoder and a 28x28 kernel decoder,
/// small enough that solver runs take seconds.
fn write_toy_models(dir: &Path) -> (PathBuf, PathBuf) {
    let g_i = common::toy_decoder(4, 28, true, 11);
    let g_k = common::toy_decoder(3, 28, false, 12);
    let pi = dir.join("gi.gbm");
    let pk = dir.join("gk.gbm");
    save_model(&g_i, &pi).unwrap();
    save_model(&g_k, &pk).unwrap();
    (pi, pk)
}

#[test]
fn invalid_config_exits_2() {
    let dir = fresh_dir("exit2");
    let status = Command::new(bin())
        .args(["gen-blurs", "--out-dir"])
        .arg(&dir)
        .args(["--count", "0"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2), "{:?}", String::from_utf8_lossy(&status.stderr));
}

#[test]
fn missing_model_file_exits_3() {
    let dir = fresh_dir("exit3");
    let image = dir.join("img.png");
    pngio::save_image(&image, &toyimg::toy_image(28, 0)).unwrap();
    let status = Command::new(bin())
        .args(["project", "--out-dir"])
        .arg(dir.join("out"))
        .arg("--image")
        .arg(&image)
        .arg("--image-model")
        .arg(dir.join("missing.gbm"))
        .args(["--steps", "1"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(3), "{:?}", String::from_utf8_lossy(&status.stderr));
    // The manifest is still written for failed runs.
    assert!(dir.join("out").join("manifest.json").exists());
}

#[test]
fn gen_blurs_writes_loadable_datasets() {
    let dir = fresh_dir("genblurs");
    let status = Command::new(bin())
        .args(["gen-blurs", "--out-dir"])
        .arg(&dir)
        .args(["--count", "40", "--test-fraction", "0.25", "--seed", "9", "--png-previews", "2"])
        .status()
        .unwrap();
    assert!(status.success());
    let train = genblur::blursynth::load_kernel_dataset(&dir.join("kernels_train.gbd")).unwrap();
    let test = genblur::blursynth::load_kernel_dataset(&dir.join("kernels_test.gbd")).unwrap();
    assert_eq!(train.len(), 30);
    assert_eq!(test.len(), 10);
    assert!(dir.join("kernel_0000.png").exists());
    assert!(dir.join("manifest.json").exists());
}

#[test]
fn config_file_supplies_flags_and_cli_overrides() {
    let dir = fresh_dir("override");
    let config_path = dir.join("config.json");
    std::fs::write(
        &config_path,
        format!(
            r#"{{
  "mode": "gen-blurs",
  "out_dir": "{}",
  "seed": 5,
  "count": 12,
  "test_fraction": 0.5,
  "length_min": 5.0,
  "length_max": 28.0,
  "png_previews": 0
}}"#,
            dir.join("out").display()
        ),
    )
    .unwrap();
    // CLI overrides count 12 -> 8.
    let status = Command::new(bin())
        .arg("gen-blurs")
        .arg("--config")
        .arg(&config_path)
        .args(["--count", "8"])
        .status()
        .unwrap();
    assert!(status.success());
    let manifest = std::fs::read_to_string(dir.join("out").join("manifest.json")).unwrap();
    assert!(manifest.contains("\"count\": 8"), "{manifest}");
    assert!(manifest.contains("\"seed\": 5"), "{manifest}");
    let train = genblur::blursynth::load_kernel_dataset(&dir.join("out/kernels_train.gbd")).unwrap();
    assert_eq!(train.len(), 4);
}

#[test]
fn deblur_dd_repeated_run_is_byte_identical() {
    let dir = fresh_dir("dd-determinism");
    let (pi, pk) = write_toy_models(&dir);
    let blurs = dir.join("blurs");
    assert!(Command::new(bin())
        .args(["gen-blurs", "--out-dir"])
        .arg(&blurs)
        .args(["--count", "8", "--test-fraction", "0.5", "--seed", "3"])
        .status()
        .unwrap()
        .success());
    let image = dir.join("sharp.png");
    pngio::save_image(&image, &toyimg::toy_image(28, 77)).unwrap();

    let run = |out: &Path| {
        let status = Command::new(bin())
            .args(["deblur-dd", "--out-dir"])
            .arg(out)
            .arg("--image-model")
            .arg(&pi)
            .arg("--kernel-model")
            .arg(&pk)
            .arg("--image")
            .arg(&image)
            .arg("--kernels")
            .arg(blurs.join("kernels_test.gbd"))
            .args([
                "--noise-sigma",
                "0.01",
                "--seed",
                "21",
                "--steps",
                "30",
                "--restarts",
                "2",
            ])
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    };
    let (a, b) = (dir.join("run_a"), dir.join("run_b"));
    run(&a);
    run(&b);
    for file in ["result.json", "trace.csv", "i_hat.png", "k_hat.png", "y.png"] {
        let left = std::fs::read(a.join(file)).unwrap();
        let right = std::fs::read(b.join(file)).unwrap();
        assert_eq!(left, right, "{file} differs between identical runs");
    }
    // The result record carries the metric report (ground truth was given).
    let record = std::fs::read_to_string(a.join("result.json")).unwrap();
    assert!(record.contains("psnr_db"), "{record}");
}

#[test]
fn sweep_row_counts_and_determinism() {
    let dir = fresh_dir("sweep");
    let (pi, pk) = write_toy_models(&dir);
    let blurs = dir.join("blurs");
    assert!(Command::new(bin())
        .args(["gen-blurs", "--out-dir"])
        .arg(&blurs)
        .args(["--count", "8", "--test-fraction", "0.5", "--seed", "3"])
        .status()
        .unwrap()
        .success());
    let images = dir.join("images");
    toyimg::write_toy_images(&images, 3, 28, 5).unwrap();

    let run = |out: &Path| {
        let status = Command::new(bin())
            .args(["sweep", "--out-dir"])
            .arg(out)
            .arg("--images")
            .arg(&images)
            .arg("--image-model")
            .arg(&pi)
            .arg("--kernel-model")
            .arg(&pk)
            .arg("--kernels")
            .arg(blurs.join("kernels_test.gbd"))
            .args([
                "--methods",
                "dd",
                "--sigmas",
                "0.01,0.05,0.1",
                "--seed",
                "17",
                "--steps",
                "20",
                "--restarts",
                "2",
            ])
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    };
    let (a, b) = (dir.join("run_a"), dir.join("run_b"));
    run(&a);
    run(&b);

    let rows = std::fs::read_to_string(a.join("noise_rows.csv")).unwrap();
    // Header plus 3 images x 3 sigmas x 1 method.
    assert_eq!(rows.lines().count(), 1 + 9, "{rows}");
    let header = rows.lines().next().unwrap();
    assert_eq!(header, "image_id,method,noise_sigma,blur_length,psnr_db,ssim,range_error,seed");

    for file in ["noise_rows.csv", "noise_summary.csv"] {
        let left = std::fs::read(a.join(file)).unwrap();
        let right = std::fs::read(b.join(file)).unwrap();
        assert_eq!(left, right, "{file} differs between identical runs");
    }

    // Summary means match a recomputation from the raw rows.
    let summary = std::fs::read_to_string(a.join("noise_summary.csv")).unwrap();
    for line in summary.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let sigma = cols[0];
        let mean_psnr: f64 = cols[2].parse().unwrap();
        let group: Vec<f64> = rows
            .lines()
            .skip(1)
            .filter(|row| row.split(',').nth(2).unwrap() == sigma)
            .map(|row| row.split(',').nth(4).unwrap().parse::<f64>().unwrap())
            .collect();
        let recomputed = group.iter().sum::<f64>() / group.len() as f64;
        assert!((mean_psnr - recomputed).abs() < 1e-9, "sigma {sigma}: {mean_psnr} vs {recomputed}");
    }
}

#[test]
fn train_vae_writes_model_and_traces() {
    let dir = fresh_dir("trainvae");
    let status = Command::new(bin())
        .args(["train-vae", "--out-dir"])
        .arg(&dir)
        .args([
            "--kind",
            "image",
            "--synth-images",
            "24",
            "--image-size",
            "16",
            "--latent-dim",
            "4",
            "--batch-size",
            "8",
            "--learning-rate",
            "0.001",
            "--epochs",
            "3",
            "--seed",
            "2",
        ])
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let model = genblur::generators::load_model(&dir.join("model.gbm")).unwrap();
    assert_eq!(model.output_shape(), &[16, 16, 1]);
    let csv = std::fs::read_to_string(dir.join("training.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 9); // header + 3 epochs x 3 steps
}

#[test]
fn project_writes_range_image_and_metrics() {
    let dir = fresh_dir("project");
    let (pi, _) = write_toy_models(&dir);
    let image = dir.join("target.png");
    pngio::save_image(&image, &toyimg::toy_image(28, 33)).unwrap();
    let status = Command::new(bin())
        .args(["project", "--out-dir"])
        .arg(dir.join("out"))
        .arg("--image")
        .arg(&image)
        .arg("--image-model")
        .arg(&pi)
        .args(["--steps", "50", "--step-size", "0.05", "--seed", "4"])
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert!(dir.join("out/i_range.png").exists());
    let record = std::fs::read_to_string(dir.join("out/result.json")).unwrap();
    assert!(record.contains("range_error"), "{record}");
}
