//! Reverse-mode automatic differentiation over a recorded operation list.
//!
//! A [`Tape`] owns every intermediate [`Tensor`] of one forward computation.
//! Operations append nodes whose parents precede them, so a single reverse
//! sweep propagates gradients to every leaf that was created with
//! `requires_grad`. A tape is confined to one thread; independent tapes may
//! run in parallel.

use crate::error::{Error, Result};

use super::kernels::{self, BatchNormStats};
use super::tensor::Tensor;

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorRef(usize);

/// Per-channel statistics captured by a training-mode batchnorm node, used by
/// the trainer to maintain running statistics.
#[derive(Debug, Clone)]
pub struct BatchNormSnapshot {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f32),
    AddConst(usize),
    Exp(usize),
    Relu(usize),
    Sigmoid(usize),
    Dense { x: usize, w: usize, b: usize },
    AddChannelBias { x: usize, b: usize },
    Conv2dFull { image: usize, kernel: usize },
    ConvValid { x: usize, w: usize, stride: usize },
    ConvTranspose { x: usize, w: usize, stride: usize },
    MaxPool { x: usize, argmax: Vec<usize> },
    UpsampleNn { x: usize, factor: usize },
    BatchNormTrain { x: usize, gamma: usize, beta: usize, stats: BatchNormStats },
    BatchNormInfer {
        x: usize,
        gamma: usize,
        beta: usize,
        running_mean: Vec<f32>,
        running_var: Vec<f32>,
    },
    Reshape(usize),
    Sum(usize),
    SumSq(usize),
    TvNorm(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    /// Scalar reductions and arithmetic on them carry their full f64 value;
    /// the f32 tensor is the rounded storage form.
    f64_value: Option<f64>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, r: TensorRef) -> &Tensor {
        &self.nodes[r.0].value
    }

    /// Gradient of a leaf after [`Tape::backward`] has run.
    pub fn grad(&self, r: TensorRef) -> Option<&[f32]> {
        self.nodes[r.0].value.grad()
    }

    pub fn leaf(&mut self, t: Tensor) -> TensorRef {
        let needs = t.requires_grad();
        self.push(t, Op::Leaf, needs)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> TensorRef {
        self.nodes.push(Node { value, op, needs_grad, f64_value: None });
        TensorRef(self.nodes.len() - 1)
    }

    fn push_scalar(&mut self, value: f64, op: Op, needs_grad: bool) -> TensorRef {
        self.nodes.push(Node {
            value: Tensor::scalar(value as f32),
            op,
            needs_grad,
            f64_value: Some(value),
        });
        TensorRef(self.nodes.len() - 1)
    }

    fn scalar_f64(&self, r: TensorRef) -> Option<f64> {
        self.nodes[r.0].f64_value
    }

    /// Full-precision value of a scalar node: reductions and scalar
    /// arithmetic chains keep their f64 accumulation; other scalars fall
    /// back to the stored f32.
    pub fn value_f64(&self, r: TensorRef) -> f64 {
        match self.nodes[r.0].f64_value {
            Some(v) => v,
            None => f64::from(self.nodes[r.0].value.data()[0]),
        }
    }

    fn needs(&self, r: TensorRef) -> bool {
        self.nodes[r.0].needs_grad
    }

    fn data(&self, r: TensorRef) -> &[f32] {
        self.nodes[r.0].value.data()
    }

    fn shape(&self, r: TensorRef) -> &[usize] {
        self.nodes[r.0].value.shape()
    }

    fn check_same_shape(&self, a: TensorRef, b: TensorRef, op: &str) -> Result<()> {
        if self.shape(a) == self.shape(b) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )))
        }
    }

    // -- elementwise -------------------------------------------------------

    pub fn add(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.check_same_shape(a, b, "add")?;
        let needs = self.needs(a) || self.needs(b);
        if let (Some(fa), Some(fb)) = (self.scalar_f64(a), self.scalar_f64(b)) {
            return Ok(self.push_scalar(fa + fb, Op::Add(a.0, b.0), needs));
        }
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Add(a.0, b.0), needs))
    }

    pub fn sub(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.check_same_shape(a, b, "sub")?;
        let needs = self.needs(a) || self.needs(b);
        if let (Some(fa), Some(fb)) = (self.scalar_f64(a), self.scalar_f64(b)) {
            return Ok(self.push_scalar(fa - fb, Op::Sub(a.0, b.0), needs));
        }
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x - y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Sub(a.0, b.0), needs))
    }

    pub fn mul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.check_same_shape(a, b, "mul")?;
        let needs = self.needs(a) || self.needs(b);
        if let (Some(fa), Some(fb)) = (self.scalar_f64(a), self.scalar_f64(b)) {
            return Ok(self.push_scalar(fa * fb, Op::Mul(a.0, b.0), needs));
        }
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a.0, b.0), needs))
    }

    pub fn scale(&mut self, a: TensorRef, c: f32) -> TensorRef {
        let needs = self.needs(a);
        if let Some(fa) = self.scalar_f64(a) {
            return self.push_scalar(fa * f64::from(c), Op::Scale(a.0, c), needs);
        }
        let data = self.data(a).iter().map(|x| x * c).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(value, Op::Scale(a.0, c), needs)
    }

    pub fn add_const(&mut self, a: TensorRef, c: f32) -> TensorRef {
        let needs = self.needs(a);
        if let Some(fa) = self.scalar_f64(a) {
            return self.push_scalar(fa + f64::from(c), Op::AddConst(a.0), needs);
        }
        let data = self.data(a).iter().map(|x| x + c).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(value, Op::AddConst(a.0), needs)
    }

    pub fn exp(&mut self, a: TensorRef) -> TensorRef {
        let data = self.data(a).iter().map(|x| x.exp()).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        let needs = self.needs(a);
        self.push(value, Op::Exp(a.0), needs)
    }

    pub fn relu(&mut self, a: TensorRef) -> TensorRef {
        let data = self.data(a).iter().map(|x| x.max(0.0)).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        let needs = self.needs(a);
        self.push(value, Op::Relu(a.0), needs)
    }

    pub fn sigmoid(&mut self, a: TensorRef) -> TensorRef {
        let data = self.data(a).iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        let needs = self.needs(a);
        self.push(value, Op::Sigmoid(a.0), needs)
    }

    // -- layers ------------------------------------------------------------

    /// `y = W x + b` for 1-D `x`.
    pub fn dense(&mut self, x: TensorRef, w: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        let (m, n) = match (ws, bs, xs) {
            ([m, n], [mb], [nx]) if mb == m && nx == n => (*m, *n),
            _ => {
                return Err(Error::Shape(format!(
                    "dense: x {xs:?}, w {ws:?}, b {bs:?} do not conform"
                )))
            }
        };
        let data = kernels::dense_fwd(self.data(x), self.data(w), self.data(b), m, n);
        let value = Tensor::new(vec![m], data)?;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(value, Op::Dense { x: x.0, w: w.0, b: b.0 }, needs))
    }

    /// Broadcast-add a per-channel bias `[c]` to an `[h, w, c]` activation.
    pub fn add_channel_bias(&mut self, x: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let (h, w, c) = match self.shape(x) {
            [h, w, c] => (*h, *w, *c),
            other => {
                return Err(Error::Shape(format!(
                    "add_channel_bias: activation must be [h,w,c], got {other:?}"
                )))
            }
        };
        if self.shape(b) != [c] {
            return Err(Error::Shape(format!(
                "add_channel_bias: bias {:?} does not match {c} channels",
                self.shape(b)
            )));
        }
        let bias = self.data(b).to_vec();
        let mut data = self.data(x).to_vec();
        for p in 0..h * w {
            for cc in 0..c {
                data[p * c + cc] += bias[cc];
            }
        }
        let value = Tensor::new(vec![h, w, c], data)?;
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(value, Op::AddChannelBias { x: x.0, b: b.0 }, needs))
    }

    /// Circular same-size convolution of an image (`[h, w, c]` or `[h, w]`)
    /// with a 2-D kernel; the kernel center `(kh/2, kw/2)` aligns with output
    /// offset zero and the kernel is flipped (true convolution).
    pub fn conv2d_full(&mut self, image: TensorRef, kernel: TensorRef) -> Result<TensorRef> {
        let (h, w, c) = self.nodes[image.0].value.image_dims()?;
        let (kh, kw) = match self.shape(kernel) {
            [kh, kw] => (*kh, *kw),
            other => {
                return Err(Error::Shape(format!("conv2d_full: kernel must be 2-D, got {other:?}")))
            }
        };
        if kh > h || kw > w {
            return Err(Error::Shape(format!(
                "conv2d_full: kernel {kh}x{kw} exceeds image {h}x{w}"
            )));
        }
        self.nodes[image.0].value.assert_finite("conv2d_full image")?;
        self.nodes[kernel.0].value.assert_finite("conv2d_full kernel")?;
        let data = kernels::conv2d_full_fwd(self.data(image), h, w, c, self.data(kernel), kh, kw);
        let value = Tensor::new(self.shape(image).to_vec(), data)?;
        let needs = self.needs(image) || self.needs(kernel);
        Ok(self.push(value, Op::Conv2dFull { image: image.0, kernel: kernel.0 }, needs))
    }

    /// Valid-padding strided convolution; `x` is `[h, w, ci]`, filters
    /// `[co, ci, kh, kw]`.
    pub fn conv_valid(&mut self, x: TensorRef, w: TensorRef, stride: usize) -> Result<TensorRef> {
        let (h, wd, ci) = match self.shape(x) {
            [h, wd, ci] => (*h, *wd, *ci),
            other => return Err(Error::Shape(format!("conv: input must be [h,w,c], got {other:?}"))),
        };
        let (co, wci, kh, kw) = match self.shape(w) {
            [co, wci, kh, kw] => (*co, *wci, *kh, *kw),
            other => {
                return Err(Error::Shape(format!("conv: filters must be 4-D, got {other:?}")))
            }
        };
        if wci != ci {
            return Err(Error::Shape(format!("conv: input has {ci} channels, filters expect {wci}")));
        }
        let (ho, wo) = match (
            kernels::conv_out_dim(h, kh, stride),
            kernels::conv_out_dim(wd, kw, stride),
        ) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::Shape(format!(
                    "conv: {h}x{wd} input with {kh}x{kw} kernel at stride {stride} has no valid output"
                )))
            }
        };
        let data =
            kernels::conv_valid_fwd(self.data(x), h, wd, ci, self.data(w), co, kh, kw, stride);
        let value = Tensor::new(vec![ho, wo, co], data)?;
        let needs = self.needs(x) || self.needs(w);
        Ok(self.push(value, Op::ConvValid { x: x.0, w: w.0, stride }, needs))
    }

    /// Transposed convolution, shape-wise the exact adjoint of [`Tape::conv_valid`]:
    /// `x` is `[h, w, co]`, filters `[co, ci, kh, kw]`, output
    /// `[(h-1)*stride+kh, (w-1)*stride+kw, ci]`.
    pub fn conv_transpose(
        &mut self,
        x: TensorRef,
        w: TensorRef,
        stride: usize,
    ) -> Result<TensorRef> {
        let (h, wd, co) = match self.shape(x) {
            [h, wd, co] => (*h, *wd, *co),
            other => {
                return Err(Error::Shape(format!("convT: input must be [h,w,c], got {other:?}")))
            }
        };
        let (wco, ci, kh, kw) = match self.shape(w) {
            [wco, ci, kh, kw] => (*wco, *ci, *kh, *kw),
            other => {
                return Err(Error::Shape(format!("convT: filters must be 4-D, got {other:?}")))
            }
        };
        if wco != co {
            return Err(Error::Shape(format!(
                "convT: input has {co} channels, filters expect {wco}"
            )));
        }
        if stride == 0 {
            return Err(Error::Shape("convT: stride must be positive".into()));
        }
        let ho = kernels::convt_out_dim(h, kh, stride);
        let wo = kernels::convt_out_dim(wd, kw, stride);
        let data = kernels::convt_fwd(self.data(x), h, wd, co, self.data(w), ci, kh, kw, stride);
        let value = Tensor::new(vec![ho, wo, ci], data)?;
        let needs = self.needs(x) || self.needs(w);
        Ok(self.push(value, Op::ConvTranspose { x: x.0, w: w.0, stride }, needs))
    }

    pub fn maxpool(&mut self, x: TensorRef, size: usize, stride: usize) -> Result<TensorRef> {
        let (h, w, c) = match self.shape(x) {
            [h, w, c] => (*h, *w, *c),
            other => {
                return Err(Error::Shape(format!("maxpool: input must be [h,w,c], got {other:?}")))
            }
        };
        if kernels::conv_out_dim(h, size, stride).is_none()
            || kernels::conv_out_dim(w, size, stride).is_none()
        {
            return Err(Error::Shape(format!(
                "maxpool: window {size} stride {stride} does not fit {h}x{w}"
            )));
        }
        let (data, argmax, ho, wo) = kernels::maxpool_fwd(self.data(x), h, w, c, size, stride);
        let value = Tensor::new(vec![ho, wo, c], data)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::MaxPool { x: x.0, argmax }, needs))
    }

    pub fn upsample_nn(&mut self, x: TensorRef, factor: usize) -> Result<TensorRef> {
        let (h, w, c) = match self.shape(x) {
            [h, w, c] => (*h, *w, *c),
            other => {
                return Err(Error::Shape(format!("upsample: input must be [h,w,c], got {other:?}")))
            }
        };
        if factor == 0 {
            return Err(Error::Shape("upsample: factor must be positive".into()));
        }
        let data = kernels::upsample_nn_fwd(self.data(x), h, w, c, factor);
        let value = Tensor::new(vec![h * factor, w * factor, c], data)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::UpsampleNn { x: x.0, factor }, needs))
    }

    /// Training-mode batchnorm over the spatial positions of one `[h, w, c]`
    /// activation. Returns the batch statistics so the caller can maintain
    /// running averages.
    pub fn batchnorm_train(
        &mut self,
        x: TensorRef,
        gamma: TensorRef,
        beta: TensorRef,
    ) -> Result<(TensorRef, BatchNormSnapshot)> {
        let (h, w, c) = match self.shape(x) {
            [h, w, c] => (*h, *w, *c),
            other => {
                return Err(Error::Shape(format!("batchnorm: input must be [h,w,c], got {other:?}")))
            }
        };
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::Shape(format!(
                "batchnorm: gamma {:?} / beta {:?} must be [{c}]",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let (data, stats) =
            kernels::batchnorm_train_fwd(self.data(x), h * w, c, self.data(gamma), self.data(beta));
        let snapshot = BatchNormSnapshot { mean: stats.mean.clone(), var: stats.var.clone() };
        let value = Tensor::new(vec![h, w, c], data)?;
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let r = self.push(value, Op::BatchNormTrain { x: x.0, gamma: gamma.0, beta: beta.0, stats }, needs);
        Ok((r, snapshot))
    }

    /// Inference-mode batchnorm with frozen running statistics.
    pub fn batchnorm_infer(
        &mut self,
        x: TensorRef,
        gamma: TensorRef,
        beta: TensorRef,
        running_mean: &[f32],
        running_var: &[f32],
    ) -> Result<TensorRef> {
        let (h, w, c) = match self.shape(x) {
            [h, w, c] => (*h, *w, *c),
            other => {
                return Err(Error::Shape(format!("batchnorm: input must be [h,w,c], got {other:?}")))
            }
        };
        if self.shape(gamma) != [c]
            || self.shape(beta) != [c]
            || running_mean.len() != c
            || running_var.len() != c
        {
            return Err(Error::Shape("batchnorm: per-channel parameter length mismatch".into()));
        }
        let data = kernels::batchnorm_infer_fwd(
            self.data(x),
            h * w,
            c,
            self.data(gamma),
            self.data(beta),
            running_mean,
            running_var,
        );
        let value = Tensor::new(vec![h, w, c], data)?;
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            value,
            Op::BatchNormInfer {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                running_mean: running_mean.to_vec(),
                running_var: running_var.to_vec(),
            },
            needs,
        ))
    }

    pub fn reshape(&mut self, x: TensorRef, shape: Vec<usize>) -> Result<TensorRef> {
        let value = self.nodes[x.0].value.clone().reshaped(shape)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Reshape(x.0), needs))
    }

    // -- reductions --------------------------------------------------------

    pub fn sum(&mut self, x: TensorRef) -> TensorRef {
        let total: f64 = self.data(x).iter().map(|&v| f64::from(v)).sum();
        let needs = self.needs(x);
        self.push_scalar(total, Op::Sum(x.0), needs)
    }

    /// Squared Euclidean norm of all elements.
    pub fn sum_sq(&mut self, x: TensorRef) -> TensorRef {
        let total: f64 = self.data(x).iter().map(|&v| f64::from(v) * f64::from(v)).sum();
        let needs = self.needs(x);
        self.push_scalar(total, Op::SumSq(x.0), needs)
    }

    /// Anisotropic total variation of an image (`[h, w, c]` or `[h, w]`).
    pub fn tv_norm(&mut self, x: TensorRef) -> Result<TensorRef> {
        let (h, w, c) = self.nodes[x.0].value.image_dims()?;
        let value = kernels::tv_norm_fwd64(self.data(x), h, w, c);
        let needs = self.needs(x);
        Ok(self.push_scalar(value, Op::TvNorm(x.0), needs))
    }

    // -- reverse sweep -----------------------------------------------------

    /// Backpropagate from a scalar loss node. Every leaf created with
    /// `requires_grad` receives a gradient, zero if the loss does not reach it.
    pub fn backward(&mut self, loss: TensorRef) -> Result<()> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::Usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }

        for (i, node) in self.nodes.iter_mut().enumerate() {
            if matches!(node.op, Op::Leaf) && node.value.requires_grad() {
                let g = grads[i].take().unwrap_or_else(|| vec![0.0; node.value.numel()]);
                node.value.set_grad(g);
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accum(*a, g, grads);
                self.accum(*b, g, grads);
            }
            Op::Sub(a, b) => {
                self.accum(*a, g, grads);
                let neg: Vec<f32> = g.iter().map(|v| -v).collect();
                self.accum(*b, &neg, grads);
            }
            Op::Mul(a, b) => {
                let ga: Vec<f32> =
                    g.iter().zip(self.nodes[*b].value.data()).map(|(gv, bv)| gv * bv).collect();
                let gb: Vec<f32> =
                    g.iter().zip(self.nodes[*a].value.data()).map(|(gv, av)| gv * av).collect();
                self.accum(*a, &ga, grads);
                self.accum(*b, &gb, grads);
            }
            Op::Scale(a, c) => {
                let ga: Vec<f32> = g.iter().map(|v| v * c).collect();
                self.accum(*a, &ga, grads);
            }
            Op::AddConst(a) => self.accum(*a, g, grads),
            Op::Exp(a) => {
                let ga: Vec<f32> =
                    g.iter().zip(node.value.data()).map(|(gv, yv)| gv * yv).collect();
                self.accum(*a, &ga, grads);
            }
            Op::Relu(a) => {
                let ga: Vec<f32> = g
                    .iter()
                    .zip(self.nodes[*a].value.data())
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.accum(*a, &ga, grads);
            }
            Op::Sigmoid(a) => {
                let ga: Vec<f32> = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(gv, yv)| gv * yv * (1.0 - yv))
                    .collect();
                self.accum(*a, &ga, grads);
            }
            Op::Dense { x, w, b } => {
                let (m, n) = {
                    let ws = self.nodes[*w].value.shape();
                    (ws[0], ws[1])
                };
                if self.nodes[*x].needs_grad {
                    let gx = kernels::dense_bwd_x(g, self.nodes[*w].value.data(), m, n);
                    self.accum(*x, &gx, grads);
                }
                if self.nodes[*w].needs_grad {
                    let gw = kernels::dense_bwd_w(g, self.nodes[*x].value.data(), m, n);
                    self.accum(*w, &gw, grads);
                }
                if self.nodes[*b].needs_grad {
                    self.accum(*b, g, grads);
                }
            }
            Op::AddChannelBias { x, b } => {
                if self.nodes[*x].needs_grad {
                    self.accum(*x, g, grads);
                }
                if self.nodes[*b].needs_grad {
                    let c = self.nodes[*b].value.numel();
                    let mut gb = vec![0.0f32; c];
                    for gv in g.chunks_exact(c) {
                        for (slot, v) in gb.iter_mut().zip(gv) {
                            *slot += v;
                        }
                    }
                    self.accum(*b, &gb, grads);
                }
            }
            Op::Conv2dFull { image, kernel } => {
                let (h, w, c) = self.nodes[*image].value.image_dims().expect("validated");
                let ks = self.nodes[*kernel].value.shape();
                let (kh, kw) = (ks[0], ks[1]);
                if self.nodes[*image].needs_grad {
                    let gi = kernels::conv2d_full_bwd_img(
                        g,
                        h,
                        w,
                        c,
                        self.nodes[*kernel].value.data(),
                        kh,
                        kw,
                    );
                    self.accum(*image, &gi, grads);
                }
                if self.nodes[*kernel].needs_grad {
                    let gk = kernels::conv2d_full_bwd_ker(
                        g,
                        self.nodes[*image].value.data(),
                        h,
                        w,
                        c,
                        kh,
                        kw,
                    );
                    self.accum(*kernel, &gk, grads);
                }
            }
            Op::ConvValid { x, w, stride } => {
                let xs = self.nodes[*x].value.shape();
                let (h, wd, ci) = (xs[0], xs[1], xs[2]);
                let ws = self.nodes[*w].value.shape();
                let (co, kh, kw) = (ws[0], ws[2], ws[3]);
                if self.nodes[*x].needs_grad {
                    let gx = kernels::conv_valid_bwd_x(
                        g,
                        h,
                        wd,
                        ci,
                        self.nodes[*w].value.data(),
                        co,
                        kh,
                        kw,
                        *stride,
                    );
                    self.accum(*x, &gx, grads);
                }
                if self.nodes[*w].needs_grad {
                    let gw = kernels::conv_valid_bwd_w(
                        g,
                        self.nodes[*x].value.data(),
                        h,
                        wd,
                        ci,
                        co,
                        kh,
                        kw,
                        *stride,
                    );
                    self.accum(*w, &gw, grads);
                }
            }
            Op::ConvTranspose { x, w, stride } => {
                let xs = self.nodes[*x].value.shape();
                let (h, wd, co) = (xs[0], xs[1], xs[2]);
                let ws = self.nodes[*w].value.shape();
                let (ci, kh, kw) = (ws[1], ws[2], ws[3]);
                if self.nodes[*x].needs_grad {
                    let gx = kernels::convt_bwd_x(
                        g,
                        h,
                        wd,
                        co,
                        self.nodes[*w].value.data(),
                        ci,
                        kh,
                        kw,
                        *stride,
                    );
                    self.accum(*x, &gx, grads);
                }
                if self.nodes[*w].needs_grad {
                    let gw = kernels::convt_bwd_w(
                        g,
                        self.nodes[*x].value.data(),
                        h,
                        wd,
                        co,
                        ci,
                        kh,
                        kw,
                        *stride,
                    );
                    self.accum(*w, &gw, grads);
                }
            }
            Op::MaxPool { x, argmax } => {
                let mut gx = vec![0.0f32; self.nodes[*x].value.numel()];
                for (gv, &src) in g.iter().zip(argmax) {
                    gx[src] += gv;
                }
                self.accum(*x, &gx, grads);
            }
            Op::UpsampleNn { x, factor } => {
                let xs = self.nodes[*x].value.shape();
                let gx = kernels::upsample_nn_bwd(g, xs[0], xs[1], xs[2], *factor);
                self.accum(*x, &gx, grads);
            }
            Op::BatchNormTrain { x, gamma, beta, stats } => {
                let xs = self.nodes[*x].value.shape();
                let (positions, c) = (xs[0] * xs[1], xs[2]);
                let (gx, ggamma, gbeta) = kernels::batchnorm_train_bwd(
                    g,
                    self.nodes[*x].value.data(),
                    positions,
                    c,
                    self.nodes[*gamma].value.data(),
                    stats,
                );
                if self.nodes[*x].needs_grad {
                    self.accum(*x, &gx, grads);
                }
                if self.nodes[*gamma].needs_grad {
                    self.accum(*gamma, &ggamma, grads);
                }
                if self.nodes[*beta].needs_grad {
                    self.accum(*beta, &gbeta, grads);
                }
            }
            Op::BatchNormInfer { x, gamma, beta, running_mean, running_var } => {
                let xs = self.nodes[*x].value.shape();
                let (positions, c) = (xs[0] * xs[1], xs[2]);
                if self.nodes[*x].needs_grad {
                    let gx = kernels::batchnorm_infer_bwd(
                        g,
                        positions,
                        c,
                        self.nodes[*gamma].value.data(),
                        running_var,
                    );
                    self.accum(*x, &gx, grads);
                }
                if self.nodes[*gamma].needs_grad || self.nodes[*beta].needs_grad {
                    let mut ggamma = vec![0.0f64; c];
                    let mut gbeta = vec![0.0f64; c];
                    let xd = self.nodes[*x].value.data();
                    for p in 0..positions {
                        for cc in 0..c {
                            let gi = f64::from(g[p * c + cc]);
                            let invstd = 1.0
                                / (f64::from(running_var[cc]) + kernels::BATCHNORM_EPS).sqrt();
                            let xhat =
                                (f64::from(xd[p * c + cc]) - f64::from(running_mean[cc])) * invstd;
                            gbeta[cc] += gi;
                            ggamma[cc] += gi * xhat;
                        }
                    }
                    let ggamma: Vec<f32> = ggamma.into_iter().map(|v| v as f32).collect();
                    let gbeta: Vec<f32> = gbeta.into_iter().map(|v| v as f32).collect();
                    self.accum(*gamma, &ggamma, grads);
                    self.accum(*beta, &gbeta, grads);
                }
            }
            Op::Reshape(x) => self.accum(*x, g, grads),
            Op::Sum(x) => {
                let gx = vec![g[0]; self.nodes[*x].value.numel()];
                self.accum(*x, &gx, grads);
            }
            Op::SumSq(x) => {
                let gx: Vec<f32> =
                    self.nodes[*x].value.data().iter().map(|v| 2.0 * v * g[0]).collect();
                self.accum(*x, &gx, grads);
            }
            Op::TvNorm(x) => {
                let (h, w, c) = self.nodes[*x].value.image_dims().expect("validated");
                let gx = kernels::tv_norm_bwd(g[0], self.nodes[*x].value.data(), h, w, c);
                self.accum(*x, &gx, grads);
            }
        }
    }

    fn accum(&self, parent: usize, incr: &[f32], grads: &mut [Option<Vec<f32>>]) {
        if !self.nodes[parent].needs_grad {
            return;
        }
        let slot = &mut grads[parent];
        match slot {
            Some(existing) => {
                for (e, v) in existing.iter_mut().zip(incr) {
                    *e += v;
                }
            }
            None => {
                *slot = Some(incr.to_vec());
            }
        }
    }
}
