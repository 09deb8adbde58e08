//! Single-file container for models and datasets: a fixed header, a JSON
//! manifest, then a raw blob of little-endian `f32` in row-major order.
//!
//! Layout: `b"GBC1"` magic, `u64` LE manifest byte length, manifest JSON,
//! blob. The manifest lists every blob entry with byte offset and length, so
//! a load can verify the file is exactly as long as declared.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

use super::network::{GeneratorModel, LayerSpec};

const MAGIC: &[u8; 4] = b"GBC1";
pub const FORMAT_VERSION: u32 = 1;

/// One named array inside the blob. Offsets and lengths are in bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub byte_offset: u64,
    pub byte_len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format_version: u32,
    pub kind: String,
    pub latent_dim: usize,
    pub layers: Vec<serde_json::Value>,
    pub output_shape: Vec<usize>,
    pub entries: Vec<BlobEntry>,
}

pub(crate) fn write_container<M: Serialize>(path: &Path, manifest: &M, blob: &[f32]) -> Result<()> {
    let manifest_bytes = serde_json::to_vec_pretty(manifest)?;
    let mut out = Vec::with_capacity(4 + 8 + manifest_bytes.len() + blob.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest_bytes);
    for v in blob {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_container<M: DeserializeOwned>(path: &Path) -> Result<(M, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::ModelFormat(format!("{}: not a container file", path.display())));
    }
    let manifest_len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
    let blob_start = 12 + manifest_len;
    if bytes.len() < blob_start {
        return Err(Error::ModelFormat(format!(
            "{}: truncated manifest (declared {manifest_len} bytes)",
            path.display()
        )));
    }
    let manifest: M = serde_json::from_slice(&bytes[12..blob_start])
        .map_err(|e| Error::ModelFormat(format!("{}: malformed manifest: {e}", path.display())))?;
    let blob_bytes = &bytes[blob_start..];
    if blob_bytes.len() % 4 != 0 {
        return Err(Error::ModelFormat(format!(
            "{}: blob length {} is not a multiple of 4",
            path.display(),
            blob_bytes.len()
        )));
    }
    let blob: Vec<f32> = blob_bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((manifest, blob))
}

/// Check entries tile the blob exactly: in-bounds, shape-consistent, and
/// covering every byte.
pub(crate) fn validate_entries(entries: &[BlobEntry], blob_len_bytes: u64, path: &Path) -> Result<()> {
    let mut covered = 0u64;
    for entry in entries {
        let numel: usize = entry.shape.iter().product();
        if entry.byte_len != (numel * 4) as u64 {
            return Err(Error::ModelFormat(format!(
                "{}: entry {} declares {} bytes but shape {:?} implies {}",
                path.display(),
                entry.name,
                entry.byte_len,
                entry.shape,
                numel * 4
            )));
        }
        if entry.byte_offset + entry.byte_len > blob_len_bytes {
            return Err(Error::ModelFormat(format!(
                "{}: entry {} overruns the blob ({} + {} > {blob_len_bytes})",
                path.display(),
                entry.name,
                entry.byte_offset,
                entry.byte_len
            )));
        }
        covered += entry.byte_len;
    }
    if covered != blob_len_bytes {
        return Err(Error::ModelFormat(format!(
            "{}: manifest covers {covered} bytes, blob has {blob_len_bytes}",
            path.display()
        )));
    }
    Ok(())
}

/// Serialize a model; `load_model(save_model(m))` reproduces bit-identical
/// decode outputs.
pub fn save_model(model: &GeneratorModel, path: &Path) -> Result<()> {
    let mut entries = Vec::new();
    let mut blob = Vec::new();
    let mut offset = 0u64;
    for (name, tensor) in model.weights() {
        let byte_len = (tensor.numel() * 4) as u64;
        entries.push(BlobEntry {
            name: name.clone(),
            shape: tensor.shape().to_vec(),
            byte_offset: offset,
            byte_len,
        });
        blob.extend_from_slice(tensor.data());
        offset += byte_len;
    }
    let manifest = ModelManifest {
        format_version: FORMAT_VERSION,
        kind: "generator".into(),
        latent_dim: model.latent_dim(),
        layers: model
            .layers()
            .iter()
            .map(|l| serde_json::to_value(l).expect("layer specs serialize"))
            .collect(),
        output_shape: model.output_shape().to_vec(),
        entries,
    };
    write_container(path, &manifest, &blob)
}

pub fn load_model(path: &Path) -> Result<GeneratorModel> {
    let (manifest, blob): (ModelManifest, Vec<f32>) = read_container(path)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "{}: format version {} unsupported (expected {FORMAT_VERSION})",
            path.display(),
            manifest.format_version
        )));
    }
    if manifest.kind != "generator" {
        return Err(Error::ModelFormat(format!(
            "{}: kind {:?} is not a generator model",
            path.display(),
            manifest.kind
        )));
    }
    let layers: Vec<LayerSpec> = manifest
        .layers
        .iter()
        .map(|v| {
            serde_json::from_value(v.clone()).map_err(|e| {
                Error::ModelFormat(format!("{}: unknown layer kind: {e}", path.display()))
            })
        })
        .collect::<Result<_>>()?;
    validate_entries(&manifest.entries, (blob.len() * 4) as u64, path)?;

    let mut weights = BTreeMap::new();
    for entry in &manifest.entries {
        let start = (entry.byte_offset / 4) as usize;
        let len = (entry.byte_len / 4) as usize;
        let tensor = Tensor::new(entry.shape.clone(), blob[start..start + len].to_vec())?;
        weights.insert(entry.name.clone(), tensor);
    }
    let model = GeneratorModel::new(manifest.latent_dim, layers, weights)?;
    if model.output_shape() != manifest.output_shape.as_slice() {
        return Err(Error::ModelFormat(format!(
            "{}: manifest output shape {:?} does not match architecture {:?}",
            path.display(),
            manifest.output_shape,
            model.output_shape()
        )));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{blur_vae_arch, toy_image_vae_arch};
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal};

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("genblur-io-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn round_trip_preserves_decode_bits() {
        let arch = toy_image_vae_arch(6, 3);
        let model = GeneratorModel::init(3, arch.decoder, 99).unwrap();
        let path = tmp("roundtrip.gbm");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();

        let mut r = rng::seeded(5);
        let z = Tensor::from_vec((0..3).map(|_| StandardNormal.sample(&mut r)).collect());
        let a = model.decode(&z).unwrap();
        let b = loaded.decode(&z).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn truncated_blob_is_a_corruption_error() {
        let arch = toy_image_vae_arch(6, 3);
        let model = GeneratorModel::init(3, arch.decoder, 1).unwrap();
        let path = tmp("trunc.gbm");
        save_model(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        match load_model(&path) {
            Err(Error::ModelFormat(_)) => {}
            other => panic!("expected ModelFormat error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_layer_kind_is_rejected() {
        let arch = toy_image_vae_arch(6, 3);
        let model = GeneratorModel::init(3, arch.decoder, 1).unwrap();
        let path = tmp("unknown-layer.gbm");
        save_model(&model, &path).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        let manifest_len = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let manifest_str = std::str::from_utf8(&bytes[12..12 + manifest_len]).unwrap();
        let patched = manifest_str.replace("\"dense\"", "\"gelu\"");
        let mut out = Vec::new();
        out.extend_from_slice(b"GBC1");
        out.extend_from_slice(&(patched.len() as u64).to_le_bytes());
        out.extend_from_slice(patched.as_bytes());
        out.extend_from_slice(&bytes[12 + manifest_len..]);
        std::fs::write(&path, out).unwrap();

        match load_model(&path) {
            Err(Error::ModelFormat(msg)) => assert!(msg.contains("unknown layer kind"), "{msg}"),
            other => panic!("expected ModelFormat error, got {other:?}"),
        }
    }

    #[test]
    fn blur_decoder_shape_is_28x28() {
        let arch = blur_vae_arch();
        let model = GeneratorModel::init(50, arch.decoder, 3).unwrap();
        assert_eq!(model.latent_dim(), 50);
        assert_eq!(model.output_shape(), &[28, 28, 1]);
        let path = tmp("blur.gbm");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        let z = Tensor::zeros(vec![50]);
        assert_eq!(loaded.decode(&z).unwrap().shape(), &[28, 28, 1]);
    }

    #[test]
    fn malformed_manifest_is_rejected() {
        let path = tmp("garbage.gbm");
        let mut out = Vec::new();
        out.extend_from_slice(b"GBC1");
        out.extend_from_slice(&5u64.to_le_bytes());
        out.extend_from_slice(b"{oops");
        std::fs::write(&path, out).unwrap();
        assert!(matches!(load_model(&path), Err(Error::ModelFormat(_))));
    }
}
