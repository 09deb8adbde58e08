use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::diffcore::{BatchNormSnapshot, Tape, Tensor, TensorRef};
use crate::error::{Error, Result};
use crate::rng;

/// One layer of a sequential network. Shapes must chain; construction checks
/// the arithmetic once so forward passes never re-validate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { units: usize },
    Conv { filters: usize, size: usize, stride: usize },
    ConvT { filters: usize, size: usize, stride: usize },
    Maxpool { size: usize, stride: usize },
    Upsample { factor: usize },
    Relu,
    Sigmoid,
    Batchnorm,
    Reshape { shape: Vec<usize> },
}

/// Whether batchnorm layers use batch statistics (training) or their stored
/// running statistics (inference).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

fn conv_dim(input: usize, k: usize, stride: usize, what: &str) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Shape(format!("{what}: stride must be positive")));
    }
    if input < k {
        return Err(Error::Shape(format!("{what}: window {k} exceeds input {input}")));
    }
    Ok((input - k) / stride + 1)
}

fn as_hwc(shape: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    match shape {
        [h, w, c] => Ok((*h, *w, *c)),
        other => Err(Error::Shape(format!("{what}: needs [h,w,c] input, got {other:?}"))),
    }
}

impl LayerSpec {
    /// Output shape for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            LayerSpec::Dense { units } => Ok(vec![*units]),
            LayerSpec::Conv { filters, size, stride } => {
                let (h, w, _c) = as_hwc(input, "conv")?;
                Ok(vec![
                    conv_dim(h, *size, *stride, "conv")?,
                    conv_dim(w, *size, *stride, "conv")?,
                    *filters,
                ])
            }
            LayerSpec::ConvT { filters, size, stride } => {
                let (h, w, _c) = as_hwc(input, "convT")?;
                if *stride == 0 {
                    return Err(Error::Shape("convT: stride must be positive".into()));
                }
                Ok(vec![(h - 1) * stride + size, (w - 1) * stride + size, *filters])
            }
            LayerSpec::Maxpool { size, stride } => {
                let (h, w, c) = as_hwc(input, "maxpool")?;
                Ok(vec![
                    conv_dim(h, *size, *stride, "maxpool")?,
                    conv_dim(w, *size, *stride, "maxpool")?,
                    c,
                ])
            }
            LayerSpec::Upsample { factor } => {
                let (h, w, c) = as_hwc(input, "upsample")?;
                if *factor == 0 {
                    return Err(Error::Shape("upsample: factor must be positive".into()));
                }
                Ok(vec![h * factor, w * factor, c])
            }
            LayerSpec::Relu | LayerSpec::Sigmoid => Ok(input.to_vec()),
            LayerSpec::Batchnorm => {
                as_hwc(input, "batchnorm")?;
                Ok(input.to_vec())
            }
            LayerSpec::Reshape { shape } => {
                let have: usize = input.iter().product();
                let want: usize = shape.iter().product();
                if have != want {
                    return Err(Error::Shape(format!(
                        "reshape: {input:?} has {have} elements, target {shape:?} has {want}"
                    )));
                }
                Ok(shape.clone())
            }
        }
    }

    /// Named weight arrays this layer owns, with shapes, given its input
    /// shape. Running batchnorm statistics ride along as non-trainable
    /// entries.
    fn weight_shapes(&self, input: &[usize]) -> Result<Vec<(&'static str, Vec<usize>, bool)>> {
        match self {
            LayerSpec::Dense { units } => {
                let n: usize = input.iter().product();
                Ok(vec![("w", vec![*units, n], true), ("b", vec![*units], true)])
            }
            LayerSpec::Conv { filters, size, .. } => {
                let (_h, _w, c) = as_hwc(input, "conv")?;
                Ok(vec![
                    ("w", vec![*filters, c, *size, *size], true),
                    ("b", vec![*filters], true),
                ])
            }
            LayerSpec::ConvT { filters, size, .. } => {
                let (_h, _w, c) = as_hwc(input, "convT")?;
                // Transposed conv consumes filters laid out as [c_in, c_out, kh, kw].
                Ok(vec![
                    ("w", vec![c, *filters, *size, *size], true),
                    ("b", vec![*filters], true),
                ])
            }
            LayerSpec::Batchnorm => {
                let (_h, _w, c) = as_hwc(input, "batchnorm")?;
                Ok(vec![
                    ("gamma", vec![c], true),
                    ("beta", vec![c], true),
                    ("running_mean", vec![c], false),
                    ("running_var", vec![c], false),
                ])
            }
            _ => Ok(vec![]),
        }
    }
}

/// A sequential network: layer list plus named weight tensors. Immutable once
/// built; evaluation happens on a caller-supplied tape.
#[derive(Debug, Clone)]
pub(crate) struct Network {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub weights: BTreeMap<String, Tensor>,
    pub output_shape: Vec<usize>,
}

pub(crate) fn weight_name(layer: usize, part: &str) -> String {
    format!("l{layer}.{part}")
}

impl Network {
    /// Validate the layer chain and adopt `weights`, checking every expected
    /// entry exists with the right shape (and nothing extra).
    pub fn with_weights(
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        weights: BTreeMap<String, Tensor>,
    ) -> Result<Self> {
        let (output_shape, expected) = Self::plan(&input_shape, &layers)?;
        for (name, shape, _) in &expected {
            match weights.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::ModelFormat(format!(
                        "weight {name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::ModelFormat(format!("missing weight {name}"))),
            }
        }
        if weights.len() != expected.len() {
            let expected_names: Vec<&String> = expected.iter().map(|(n, _, _)| n).collect();
            let extra: Vec<&String> =
                weights.keys().filter(|k| !expected_names.contains(k)).collect();
            return Err(Error::ModelFormat(format!("unexpected weight entries {extra:?}")));
        }
        Ok(Network { input_shape, layers, weights, output_shape })
    }

    /// Seeded Glorot-uniform initialization (biases zero, batchnorm identity).
    pub fn init(input_shape: Vec<usize>, layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        Self::init_scaled(input_shape, layers, seed, false)
    }

    /// Initialization tuned for training runs: conv biases start slightly
    /// positive so relu units are alive, and the output layer starts at a
    /// tenth of the Glorot scale so early gradients shape the output rather
    /// than crush it (decoders here regress targets far below unit scale).
    pub fn init_for_training(
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        seed: u64,
    ) -> Result<Self> {
        Self::init_scaled(input_shape, layers, seed, true)
    }

    fn init_scaled(
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        seed: u64,
        for_training: bool,
    ) -> Result<Self> {
        let (_output, expected) = Self::plan(&input_shape, &layers)?;
        let last_weight_layer = expected
            .iter()
            .filter(|(n, _, _)| n.ends_with(".w"))
            .last()
            .map(|(n, _, _)| n.clone());
        let mut weights = BTreeMap::new();
        for (name, shape, _) in expected {
            let numel: usize = shape.iter().product();
            let tensor = if name.ends_with(".w") {
                let (fan_out, fan_in) = match shape.as_slice() {
                    [m, n] => (*m, *n),
                    [co, ci, kh, kw] => (co * kh * kw, ci * kh * kw),
                    _ => (numel, numel),
                };
                let mut limit = (6.0 / (fan_in + fan_out) as f32).sqrt();
                if for_training && Some(&name) == last_weight_layer.as_ref() {
                    limit *= 0.1;
                }
                let mut r = rng::seeded(rng::derive_seed(seed, &["init", &name]));
                Tensor::new(shape, (0..numel).map(|_| r.gen_range(-limit..limit)).collect())?
            } else if name.ends_with(".gamma") || name.ends_with(".running_var") {
                Tensor::full(shape, 1.0)
            } else if for_training
                && name.ends_with(".b")
                && shape.len() == 1
                && is_conv_bias(&layers, &name)
            {
                Tensor::full(shape, 0.01)
            } else {
                Tensor::zeros(shape)
            };
            weights.insert(name, tensor);
        }
        Self::with_weights(input_shape, layers, weights)
    }

    /// Per-layer weight plan: (name, shape, trainable), walking the shape chain.
    pub fn plan(
        input_shape: &[usize],
        layers: &[LayerSpec],
    ) -> Result<(Vec<usize>, Vec<(String, Vec<usize>, bool)>)> {
        let mut shape = input_shape.to_vec();
        let mut expected = Vec::new();
        for (idx, layer) in layers.iter().enumerate() {
            for (part, wshape, trainable) in layer.weight_shapes(&shape)? {
                expected.push((weight_name(idx, part), wshape, trainable));
            }
            shape = layer.output_shape(&shape)?;
        }
        Ok((shape, expected))
    }

    pub fn trainable_names(&self) -> Vec<String> {
        let (_, expected) = Self::plan(&self.input_shape, &self.layers).expect("validated");
        expected.into_iter().filter(|(_, _, t)| *t).map(|(n, _, _)| n).collect()
    }

    /// Put every weight on the tape once. `requires_grad` marks the trainable
    /// entries for the backward pass.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> BTreeMap<String, TensorRef> {
        let trainable = if requires_grad { self.trainable_names() } else { Vec::new() };
        self.weights
            .iter()
            .map(|(name, tensor)| {
                let t = if trainable.contains(name) {
                    tensor.clone().with_grad()
                } else {
                    tensor.clone()
                };
                (name.clone(), tape.leaf(t))
            })
            .collect()
    }

    /// Forward pass through bound weights. Returns the output node and, in
    /// training mode, the per-batchnorm-layer batch statistics.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &BTreeMap<String, TensorRef>,
        input: TensorRef,
        mode: Mode,
    ) -> Result<(TensorRef, Vec<(usize, BatchNormSnapshot)>)> {
        let mut x = input;
        let mut snapshots = Vec::new();
        for (idx, layer) in self.layers.iter().enumerate() {
            x = match layer {
                LayerSpec::Dense { .. } => {
                    let numel = tape.value(x).numel();
                    let flat = if tape.value(x).shape().len() > 1 {
                        tape.reshape(x, vec![numel])?
                    } else {
                        x
                    };
                    let w = bound[&weight_name(idx, "w")];
                    let b = bound[&weight_name(idx, "b")];
                    tape.dense(flat, w, b)?
                }
                LayerSpec::Conv { stride, .. } => {
                    let w = bound[&weight_name(idx, "w")];
                    let b = bound[&weight_name(idx, "b")];
                    let y = tape.conv_valid(x, w, *stride)?;
                    tape.add_channel_bias(y, b)?
                }
                LayerSpec::ConvT { stride, .. } => {
                    let w = bound[&weight_name(idx, "w")];
                    let b = bound[&weight_name(idx, "b")];
                    let y = tape.conv_transpose(x, w, *stride)?;
                    tape.add_channel_bias(y, b)?
                }
                LayerSpec::Maxpool { size, stride } => tape.maxpool(x, *size, *stride)?,
                LayerSpec::Upsample { factor } => tape.upsample_nn(x, *factor)?,
                LayerSpec::Relu => tape.relu(x),
                LayerSpec::Sigmoid => tape.sigmoid(x),
                LayerSpec::Batchnorm => {
                    let gamma = bound[&weight_name(idx, "gamma")];
                    let beta = bound[&weight_name(idx, "beta")];
                    match mode {
                        Mode::Train => {
                            let (y, snap) = tape.batchnorm_train(x, gamma, beta)?;
                            snapshots.push((idx, snap));
                            y
                        }
                        Mode::Infer => {
                            let mean = self.weights[&weight_name(idx, "running_mean")].data();
                            let var = self.weights[&weight_name(idx, "running_var")].data();
                            tape.batchnorm_infer(x, gamma, beta, mean, var)?
                        }
                    }
                }
                LayerSpec::Reshape { shape } => tape.reshape(x, shape.clone())?,
            };
        }
        Ok((x, snapshots))
    }
}

fn is_conv_bias(layers: &[LayerSpec], name: &str) -> bool {
    name.strip_prefix('l')
        .and_then(|rest| rest.strip_suffix(".b"))
        .and_then(|idx| idx.parse::<usize>().ok())
        .map(|idx| matches!(layers.get(idx), Some(LayerSpec::Conv { .. } | LayerSpec::ConvT { .. })))
        .unwrap_or(false)
}

/// A pretrained decoder `G: R^latent_dim -> output_shape`. Weights are
/// immutable after construction; decoding is pure.
#[derive(Debug, Clone)]
pub struct GeneratorModel {
    net: Network,
}

impl GeneratorModel {
    pub fn new(
        latent_dim: usize,
        layers: Vec<LayerSpec>,
        weights: BTreeMap<String, Tensor>,
    ) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::Shape("latent_dim must be positive".into()));
        }
        Ok(GeneratorModel { net: Network::with_weights(vec![latent_dim], layers, weights)? })
    }

    /// Seeded random initialization (used by tests and as the VAE starting
    /// point).
    pub fn init(latent_dim: usize, layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::Shape("latent_dim must be positive".into()));
        }
        Ok(GeneratorModel { net: Network::init(vec![latent_dim], layers, seed)? })
    }

    pub(crate) fn from_network(net: Network) -> Self {
        GeneratorModel { net }
    }

    pub fn latent_dim(&self) -> usize {
        self.net.input_shape[0]
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.net.output_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.net.layers
    }

    pub fn weights(&self) -> &BTreeMap<String, Tensor> {
        &self.net.weights
    }

    /// Differentiable forward pass on an existing tape. Batchnorm always uses
    /// the stored running statistics: generator weights are fixed.
    pub fn decode_on_tape(&self, tape: &mut Tape, z: TensorRef) -> Result<TensorRef> {
        if tape.value(z).shape() != [self.latent_dim()] {
            return Err(Error::Shape(format!(
                "decode: latent has shape {:?}, model expects [{}]",
                tape.value(z).shape(),
                self.latent_dim()
            )));
        }
        let bound = self.net.bind(tape, false);
        let (out, _) = self.net.forward(tape, &bound, z, Mode::Infer)?;
        Ok(out)
    }

    /// Pure decode: same `(weights, z)` always yields the same output.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let zr = tape.leaf(z.clone());
        let out = self.decode_on_tape(&mut tape, zr)?;
        Ok(tape.value(out).clone())
    }
}
