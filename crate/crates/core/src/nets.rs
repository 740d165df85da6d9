//! U-Net generator and PatchGAN discriminator built from a flat layer list.
//!
//! A network is a sequence of [`LayerSpec`]s applied in order. Skip
//! connections are expressed by [`LayerSpec::ConcatSkip`], which concatenates
//! the running activation with the output of an earlier layer.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::conv::conv_out_size;
use crate::tensor::{Activation, Float, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid architecture: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, NetError>;

pub const INIT_STD: f64 = 0.02;
pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv { in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize },
    ConvTranspose { in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize },
    InstanceNorm { channels: usize },
    Activation { kind: Activation },
    /// Concatenate along channels with the output of layer `from`.
    ConcatSkip { from: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Generator,
    Discriminator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetMeta {
    pub role: Role,
    pub in_ch: usize,
    pub out_ch: usize,
    pub image_size: usize,
    pub base_filters: usize,
}

#[derive(Debug, Clone)]
pub struct NamedParam<T: Float = f32> {
    pub name: String,
    pub tensor: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Network<T: Float = f32> {
    pub meta: NetMeta,
    pub layers: Vec<LayerSpec>,
    pub params: Vec<NamedParam<T>>,
}

fn param_shapes(i: usize, layer: &LayerSpec) -> Vec<(String, Vec<usize>)> {
    match *layer {
        LayerSpec::Conv { in_ch, out_ch, kernel, .. } => vec![
            (format!("{i}.weight"), vec![out_ch, in_ch, kernel, kernel]),
            (format!("{i}.bias"), vec![out_ch]),
        ],
        LayerSpec::ConvTranspose { in_ch, out_ch, kernel, .. } => vec![
            (format!("{i}.weight"), vec![in_ch, out_ch, kernel, kernel]),
            (format!("{i}.bias"), vec![out_ch]),
        ],
        LayerSpec::InstanceNorm { channels } => vec![
            (format!("{i}.gamma"), vec![channels]),
            (format!("{i}.beta"), vec![channels]),
        ],
        _ => Vec::new(),
    }
}

impl<T: Float> Network<T> {
    /// Allocate parameters for `layers`: weights from N(0, 0.02), biases and
    /// shifts zero, scales one.
    pub fn init<R: Rng + ?Sized>(meta: NetMeta, layers: Vec<LayerSpec>, rng: &mut R) -> Result<Self> {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut params = Vec::new();
        for (i, layer) in layers.iter().enumerate() {
            for (name, shape) in param_shapes(i, layer) {
                let n: usize = shape.iter().product();
                let data: Vec<T> = if name.ends_with(".weight") {
                    (0..n).map(|_| T::lit(normal.sample(rng))).collect()
                } else if name.ends_with(".gamma") {
                    vec![T::one(); n]
                } else {
                    vec![T::zero(); n]
                };
                params.push(NamedParam { name, tensor: Tensor::parameter(&shape, data)? });
            }
        }
        Ok(Network { meta, layers, params })
    }

    /// Rebuild from stored parameter values, checking names and shapes.
    pub fn from_parts(meta: NetMeta, layers: Vec<LayerSpec>, values: Vec<(String, Vec<usize>, Vec<T>)>) -> Result<Self> {
        let expected: Vec<(String, Vec<usize>)> = layers.iter().enumerate().flat_map(|(i, l)| param_shapes(i, l)).collect();
        if expected.len() != values.len() {
            return Err(NetError::Config(format!("expected {} tensors, found {}", expected.len(), values.len())));
        }
        let mut params = Vec::with_capacity(values.len());
        for ((en, es), (name, shape, data)) in expected.into_iter().zip(values) {
            if en != name || es != shape {
                return Err(NetError::Config(format!("tensor {name} {shape:?} does not match layer {en} {es:?}")));
            }
            params.push(NamedParam { name, tensor: Tensor::parameter(&shape, data)? });
        }
        Ok(Network { meta, layers, params })
    }

    pub fn parameters(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| p.tensor.clone()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.tensor.zero_grad();
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        let mut p = 0;
        for layer in &self.layers {
            cur = match *layer {
                LayerSpec::Conv { stride, pad, .. } => {
                    let y = cur.conv2d(&self.params[p].tensor, &self.params[p + 1].tensor, stride, pad)?;
                    p += 2;
                    y
                }
                LayerSpec::ConvTranspose { stride, pad, .. } => {
                    let y = cur.conv_transpose2d(&self.params[p].tensor, &self.params[p + 1].tensor, stride, pad)?;
                    p += 2;
                    y
                }
                LayerSpec::InstanceNorm { .. } => {
                    let y = cur.instance_norm(&self.params[p].tensor, &self.params[p + 1].tensor, T::lit(NORM_EPS))?;
                    p += 2;
                    y
                }
                LayerSpec::Activation { kind } => cur.activation(kind),
                LayerSpec::ConcatSkip { from } => {
                    let skip = outputs
                        .get(from)
                        .ok_or_else(|| NetError::Config(format!("skip from layer {from} before it ran")))?;
                    cur.concat_channels(skip)?
                }
            };
            outputs.push(cur.clone());
        }
        Ok(cur)
    }
}

impl Network<f32> {
    /// Same architecture and values in double precision.
    pub fn to_f64(&self) -> Network<f64> {
        Network {
            meta: self.meta.clone(),
            layers: self.layers.clone(),
            params: self
                .params
                .iter()
                .map(|p| NamedParam {
                    name: p.name.clone(),
                    tensor: Tensor::parameter(p.tensor.shape(), p.tensor.to_vec().iter().map(|&v| v as f64).collect())
                        .expect("same shape"),
                })
                .collect(),
        }
    }
}

const K: usize = 4;

/// Encoder channel count at stage `s`.
fn enc_channels(base: usize, s: usize) -> usize {
    (base << s.min(3)).min(8 * base)
}

/// U-Net layer list with `depth` stride-2 encoder stages and mirrored
/// decoder. The bottleneck is `size / 2^depth` pixels wide.
pub fn unet_layers(size: usize, base: usize, in_ch: usize, out_ch: usize, depth: usize) -> Result<Vec<LayerSpec>> {
    if depth == 0 || base == 0 || in_ch == 0 || out_ch == 0 {
        return Err(NetError::Config("depth, filters and channels must be positive".into()));
    }
    if !size.is_multiple_of(1 << depth) || size >> depth == 0 {
        return Err(NetError::Config(format!("size {size} not divisible by 2^{depth}")));
    }
    let leaky = Activation::LeakyRelu;
    let mut layers = Vec::new();
    let mut enc_out = Vec::with_capacity(depth);
    let mut ch = in_ch;
    for s in 0..depth {
        let oc = enc_channels(base, s);
        layers.push(LayerSpec::Conv { in_ch: ch, out_ch: oc, kernel: K, stride: 2, pad: 1 });
        // no normalization on the first stage or on a 1x1 bottleneck
        if s > 0 && (size >> (s + 1)) > 1 {
            layers.push(LayerSpec::InstanceNorm { channels: oc });
        }
        layers.push(LayerSpec::Activation { kind: leaky });
        enc_out.push(layers.len() - 1);
        ch = oc;
    }
    for s in (0..depth - 1).rev() {
        let oc = enc_channels(base, s);
        layers.push(LayerSpec::ConvTranspose { in_ch: ch, out_ch: oc, kernel: K, stride: 2, pad: 1 });
        layers.push(LayerSpec::InstanceNorm { channels: oc });
        layers.push(LayerSpec::Activation { kind: Activation::Relu });
        layers.push(LayerSpec::ConcatSkip { from: enc_out[s] });
        ch = 2 * oc;
    }
    layers.push(LayerSpec::ConvTranspose { in_ch: ch, out_ch, kernel: K, stride: 2, pad: 1 });
    layers.push(LayerSpec::Activation { kind: Activation::Tanh });
    Ok(layers)
}

/// Encoder depth used for a generator at `size`: the bottleneck is 4x4.
pub fn generator_depth(size: usize) -> Result<usize> {
    if !size.is_power_of_two() || !(64..=256).contains(&size) {
        return Err(NetError::Config(format!("generator size {size} must be a power of two in 64..=256")));
    }
    Ok(size.trailing_zeros() as usize - 2)
}

pub fn build_unet<T: Float, R: Rng + ?Sized>(size: usize, base: usize, in_ch: usize, out_ch: usize, depth: usize, rng: &mut R) -> Result<Network<T>> {
    let layers = unet_layers(size, base, in_ch, out_ch, depth)?;
    let meta = NetMeta { role: Role::Generator, in_ch, out_ch, image_size: size, base_filters: base };
    Network::init(meta, layers, rng)
}

/// Image-to-image generator for square RGB images.
pub fn build_generator<T: Float, R: Rng + ?Sized>(size: usize, base: usize, rng: &mut R) -> Result<Network<T>> {
    build_unet(size, base, 3, 3, generator_depth(size)?, rng)
}

/// 70x70 PatchGAN layer list producing raw logits.
pub fn patchgan_layers(base: usize, in_ch: usize) -> Vec<LayerSpec> {
    let leaky = LayerSpec::Activation { kind: Activation::LeakyRelu };
    let conv = |i, o, stride| LayerSpec::Conv { in_ch: i, out_ch: o, kernel: K, stride, pad: 1 };
    vec![
        conv(in_ch, base, 2),
        leaky,
        conv(base, 2 * base, 2),
        LayerSpec::InstanceNorm { channels: 2 * base },
        leaky,
        conv(2 * base, 4 * base, 2),
        LayerSpec::InstanceNorm { channels: 4 * base },
        leaky,
        conv(4 * base, 8 * base, 1),
        LayerSpec::InstanceNorm { channels: 8 * base },
        leaky,
        conv(8 * base, 1, 1),
    ]
}

pub fn build_discriminator<T: Float, R: Rng + ?Sized>(size: usize, base: usize, in_ch: usize, rng: &mut R) -> Result<Network<T>> {
    if size < 32 {
        return Err(NetError::Config(format!("discriminator input {size} too small")));
    }
    if base == 0 || in_ch == 0 {
        return Err(NetError::Config("filters and channels must be positive".into()));
    }
    let meta = NetMeta { role: Role::Discriminator, in_ch, out_ch: 1, image_size: size, base_filters: base };
    Network::init(meta, patchgan_layers(base, in_ch), rng)
}

/// Receptive field of one output element of a conv stack, in input pixels.
pub fn receptive_field(layers: &[LayerSpec]) -> usize {
    layers.iter().rev().fold(1, |r, l| match *l {
        LayerSpec::Conv { kernel, stride, .. } => r * stride + kernel - stride,
        _ => r,
    })
}

/// Receptive field of one discriminator score.
pub fn patch_receptive_field<T: Float>(net: &Network<T>) -> Result<usize> {
    if net.meta.role != Role::Discriminator {
        return Err(NetError::Config("receptive field is defined for discriminators".into()));
    }
    Ok(receptive_field(&net.layers))
}

/// Spatial output side of a conv stack for a square input.
pub fn output_size(layers: &[LayerSpec], input: usize) -> Option<usize> {
    layers.iter().try_fold(input, |n, l| match *l {
        LayerSpec::Conv { kernel, stride, pad, .. } => conv_out_size(n, kernel, stride, pad),
        LayerSpec::ConvTranspose { kernel, stride, pad, .. } => {
            crate::tensor::conv::conv_transpose_out_size(n, kernel, stride, pad)
        }
        _ => Some(n),
    })
}
