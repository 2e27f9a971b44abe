//! Parameterized building blocks: linear maps, convolutions, per-channel
//! affine normalization, and layer norm. All are inference-only.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{conv2d, gemm_acc, Conv2dParams, Tensor};

pub const LAYER_NORM_EPS: f32 = 1e-5;

/// Anything that owns trainable scalars.
pub trait Parameters {
    fn param_count(&self) -> usize;
}

/// He-style fan-in normal: `std = sqrt(2 / fan_in)`.
pub fn he_normal(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn_with(shape, (2.0 / fan_in as f32).sqrt(), rng)
}

/// Per-token linear map over the last axis; equivalently a 1×1 convolution.
/// The weight is stored `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.shape()[1]] {
            return Err(Error::ShapeMismatch {
                op: "Linear::new",
                lhs: weight.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        Ok(Self { weight, bias })
    }

    pub fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: he_normal(&[in_dim, out_dim], in_dim, rng),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    /// Weights drawn with `std = 1/sqrt(in_dim)`, keeping activations at unit scale.
    pub fn init_unit(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: Tensor::randn_with(&[in_dim, out_dim], 1.0 / (in_dim as f32).sqrt(), rng),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            weight: Tensor::from_fn(&[dim, dim], |i| if i / dim == i % dim { 1.0 } else { 0.0 }),
            bias: Tensor::zeros(&[dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let in_dim = self.in_dim();
        let out_dim = self.out_dim();
        if x.shape().last() != Some(&in_dim) {
            return Err(Error::ShapeMismatch {
                op: "linear",
                lhs: x.shape().to_vec(),
                rhs: self.weight.shape().to_vec(),
            });
        }
        let rows = x.numel() / in_dim;
        let mut out = Vec::with_capacity(rows * out_dim);
        for _ in 0..rows {
            out.extend_from_slice(self.bias.data());
        }
        gemm_acc(rows, in_dim, out_dim, x.data(), self.weight.data(), &mut out);
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = out_dim;
        Tensor::new(&shape, out)
    }
}

impl Parameters for Linear {
    fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }
}

/// Bias-free convolution, always followed by a [`ChannelAffine`] in this crate.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub params: Conv2dParams,
}

impl Conv2d {
    pub fn init(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_ch / groups * kernel * kernel;
        Self {
            weight: he_normal(&[out_ch, in_ch / groups, kernel, kernel], fan_in, rng),
            params: Conv2dParams { stride, padding: kernel / 2, groups },
        }
    }

    pub fn depthwise(channels: usize, kernel: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::init(channels, channels, kernel, stride, channels, rng)
    }

    pub fn pointwise(in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::init(in_ch, out_ch, 1, 1, 1, rng)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, &self.weight, self.params)
    }

    pub fn zero_weights(&mut self) {
        self.weight.data_mut().fill(0.0);
    }
}

impl Parameters for Conv2d {
    fn param_count(&self) -> usize {
        self.weight.numel()
    }
}

/// Inference-mode batch normalization with running statistics folded into a
/// per-channel scale and shift over axis 1 of `[B, C, H, W]`.
#[derive(Debug, Clone)]
pub struct ChannelAffine {
    pub scale: Vec<f32>,
    pub shift: Vec<f32>,
}

impl ChannelAffine {
    pub fn new(channels: usize) -> Self {
        Self { scale: vec![1.0; channels], shift: vec![0.0; channels] }
    }

    pub fn forward_in_place(&self, x: &mut Tensor, relu: bool) -> Result<()> {
        let shape = x.shape().to_vec();
        if shape.len() != 4 || shape[1] != self.scale.len() {
            return Err(Error::ShapeMismatch {
                op: "channel_affine",
                lhs: shape,
                rhs: vec![self.scale.len()],
            });
        }
        let plane = shape[2] * shape[3];
        for (i, chunk) in x.data_mut().chunks_exact_mut(plane).enumerate() {
            let c = i % self.scale.len();
            let (g, b) = (self.scale[c], self.shift[c]);
            for v in chunk {
                let y = *v * g + b;
                *v = if relu { y.max(0.0) } else { y };
            }
        }
        Ok(())
    }
}

impl Parameters for ChannelAffine {
    fn param_count(&self) -> usize {
        self.scale.len() + self.shift.len()
    }
}

/// Convolution followed by folded batch norm and an optional ReLU.
#[derive(Debug, Clone)]
pub struct ConvNorm {
    pub conv: Conv2d,
    pub norm: ChannelAffine,
    pub relu: bool,
}

impl ConvNorm {
    pub fn new(conv: Conv2d, relu: bool) -> Self {
        let norm = ChannelAffine::new(conv.out_channels());
        Self { conv, norm, relu }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = self.conv.forward(x)?;
        self.norm.forward_in_place(&mut y, self.relu)?;
        Ok(y)
    }

    pub fn zero_weights(&mut self) {
        self.conv.zero_weights();
        self.norm.scale.fill(0.0);
        self.norm.shift.fill(0.0);
    }
}

impl Parameters for ConvNorm {
    fn param_count(&self) -> usize {
        self.conv.param_count() + self.norm.param_count()
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub scale: Vec<f32>,
    pub shift: Vec<f32>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self { scale: vec![1.0; dim], shift: vec![0.0; dim] }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm_lastdim(&self.scale, &self.shift, LAYER_NORM_EPS)
    }
}

impl Parameters for LayerNorm {
    fn param_count(&self) -> usize {
        self.scale.len() + self.shift.len()
    }
}
