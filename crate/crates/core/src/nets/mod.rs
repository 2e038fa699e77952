//! Network definitions: generators, the patch discriminator, downsampler
//! banks and fixed feature extractors, all built on one block-sequential
//! [`Network`] description that supports tapped forward passes.

mod discriminator;
mod downsampler;
mod extractor;
mod generator;

pub use discriminator::{build_discriminator, Discriminator, DiscriminatorSpec};
pub use downsampler::{build_aligner, build_bank, ChannelAligner, DownsamplerBank};
pub use extractor::{build_extractor, FeatureExtractor, FeatureExtractorSpec};
pub use generator::{build_generator, Generator, GeneratorSpec};

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Grads, Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::tensor::Tensor;

pub const INSTANCE_NORM_EPS: f64 = 1e-5;
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv {
        name: String,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    InstanceNorm {
        name: String,
        channels: usize,
    },
    Relu,
    LeakyRelu(f64),
    Tanh,
    /// Nearest-neighbour upsampling by an integer factor.
    Upsample(usize),
}

impl Layer {
    pub fn conv(name: impl Into<String>, in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Layer::Conv {
            name: name.into(),
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
        }
    }

    pub fn norm(name: impl Into<String>, channels: usize) -> Self {
        Layer::InstanceNorm {
            name: name.into(),
            channels,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv { .. } => "conv",
            Layer::InstanceNorm { .. } => "instance_norm",
            Layer::Relu => "relu",
            Layer::LeakyRelu(_) => "leaky_relu",
            Layer::Tanh => "tanh",
            Layer::Upsample(_) => "upsample",
        }
    }

    /// Output `(C, H, W)` for input `(C, H, W)`, from conv arithmetic.
    pub fn output_shape(&self, (c, h, w): (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        match self {
            Layer::Conv {
                name,
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
            } => {
                if c != *in_ch {
                    return Err(Error::Shape(format!(
                        "layer {name}: expects {in_ch} input channels, got {c}"
                    )));
                }
                let out = |len: usize| {
                    crate::autograd::kernels::conv_out_len(len, *kernel, *stride, *pad)
                };
                match (out(h), out(w)) {
                    (Some(ho), Some(wo)) => Ok((*out_ch, ho, wo)),
                    _ => Err(Error::Shape(format!(
                        "layer {name}: {kernel}x{kernel} kernel does not fit a {h}x{w} input"
                    ))),
                }
            }
            Layer::InstanceNorm { name, channels } => {
                if c != *channels {
                    return Err(Error::Shape(format!(
                        "layer {name}: expects {channels} channels, got {c}"
                    )));
                }
                Ok((c, h, w))
            }
            Layer::Upsample(f) => Ok((c, h * f, w * f)),
            Layer::Relu | Layer::LeakyRelu(_) | Layer::Tanh => Ok((c, h, w)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub name: String,
    pub layers: Vec<Layer>,
    /// Adds the block input to its output.
    pub residual: bool,
}

/// How convolution weights are drawn at initialization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ConvInit {
    /// Zero-mean normal with fixed standard deviation.
    Normal(f64),
    /// Zero-mean normal with standard deviation `sqrt(gain / fan_in)`.
    FanIn(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub blocks: Vec<Block>,
}

/// Parameter paths of a network bound to tape leaves.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Binding over vars recorded elsewhere on the tape.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self { vars: vars.into_iter().collect() }
    }

    pub fn var(&self, path: &str) -> Result<Var> {
        self.vars
            .get(path)
            .copied()
            .ok_or_else(|| Error::Config(format!("parameter `{path}` is not bound")))
    }

    /// Gradient for every bound parameter; zeros where nothing flowed,
    /// which includes every frozen parameter.
    pub fn grads(&self, grads: &Grads, params: &ParameterSet) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(path, var)| {
                let shape = params
                    .get(path)
                    .map(|p| p.value.shape().to_vec())
                    .unwrap_or_default();
                (path.clone(), grads.get_or_zeros(*var, &shape))
            })
            .collect()
    }
}

/// Whether bound parameters collect gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binding {
    /// Trainable parameters collect gradients; frozen ones never do.
    Train,
    /// No parameter collects a gradient (inputs still can).
    Constant,
}

pub fn bind(tape: &mut Tape, params: &ParameterSet, binding: Binding) -> Bound {
    let vars = params
        .iter()
        .map(|(path, p)| {
            let rg = binding == Binding::Train && !p.frozen;
            (path.to_string(), tape.leaf(p.value.clone(), rg))
        })
        .collect();
    Bound { vars }
}

impl Network {
    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.blocks.iter().flat_map(|b| b.layers.iter())
    }

    /// Fresh parameters: conv weights from `init`, zero biases, unit norm
    /// scales and zero norm shifts.
    pub fn init_params<R: Rng + ?Sized>(&self, init: ConvInit, rng: &mut R) -> ParameterSet {
        let mut params = ParameterSet::new();
        for layer in self.layers() {
            match layer {
                Layer::Conv {
                    name,
                    in_ch,
                    out_ch,
                    kernel,
                    ..
                } => {
                    let fan_in = in_ch * kernel * kernel;
                    let std = match init {
                        ConvInit::Normal(std) => std,
                        ConvInit::FanIn(gain) => (gain / fan_in as f64).sqrt(),
                    };
                    let normal = Normal::new(0.0, std).expect("finite std");
                    let w = Tensor::from_fn(&[*out_ch, *in_ch, *kernel, *kernel], |_| normal.sample(rng));
                    params.insert(format!("{name}.weight"), w, false);
                    params.insert(format!("{name}.bias"), Tensor::zeros(&[*out_ch]), false);
                }
                Layer::InstanceNorm { name, channels } => {
                    params.insert(format!("{name}.gamma"), Tensor::full(&[*channels], 1.0), false);
                    params.insert(format!("{name}.beta"), Tensor::zeros(&[*channels]), false);
                }
                _ => {}
            }
        }
        params
    }

    /// Analytic `(C, H, W)` after every block.
    pub fn block_shapes(&self, input: (usize, usize, usize)) -> Result<Vec<(usize, usize, usize)>> {
        let mut shape = input;
        let mut out = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let start = shape;
            for layer in &block.layers {
                shape = layer.output_shape(shape)?;
            }
            if block.residual && shape != start {
                return Err(Error::Shape(format!(
                    "residual block {} changes shape {:?} -> {:?}",
                    block.name, start, shape
                )));
            }
            out.push(shape);
        }
        Ok(out)
    }

    fn apply_layer(&self, tape: &mut Tape, bound: &Bound, layer: &Layer, x: Var) -> Result<Var> {
        match layer {
            Layer::Conv {
                name, stride, pad, ..
            } => {
                let w = bound.var(&format!("{name}.weight"))?;
                let b = bound.var(&format!("{name}.bias"))?;
                tape.conv2d(x, w, Some(b), *stride, *pad)
            }
            Layer::InstanceNorm { name, .. } => {
                let g = bound.var(&format!("{name}.gamma"))?;
                let b = bound.var(&format!("{name}.beta"))?;
                tape.instance_norm(x, g, b, INSTANCE_NORM_EPS)
            }
            Layer::Relu => Ok(tape.relu(x)),
            Layer::LeakyRelu(s) => Ok(tape.leaky_relu(x, *s)),
            Layer::Tanh => Ok(tape.tanh(x)),
            Layer::Upsample(f) => tape.upsample_nearest(x, *f),
        }
    }

    /// Runs blocks `0..=last`, collecting the outputs of the blocks listed
    /// in `taps` (strictly increasing, each `<= last`).
    pub fn forward_until(&self, tape: &mut Tape, bound: &Bound, x: Var, last: usize, taps: &[usize]) -> Result<(Var, Vec<Var>)> {
        crate::config::validate_taps("taps", taps, self.depth(), true)?;
        if last >= self.depth() {
            return Err(Error::Config(format!(
                "block {last} out of range for a network with {} blocks",
                self.depth()
            )));
        }
        if let Some(&t) = taps.last() {
            if t > last {
                return Err(Error::Config(format!("tap {t} lies beyond block {last}")));
            }
        }
        let mut h = x;
        let mut features = Vec::with_capacity(taps.len());
        let mut next_tap = taps.iter().peekable();
        for (i, block) in self.blocks[..=last].iter().enumerate() {
            let input = h;
            for layer in &block.layers {
                h = self.apply_layer(tape, bound, layer, h)?;
            }
            if block.residual {
                h = tape.add(h, input)?;
            }
            if next_tap.peek() == Some(&&i) {
                features.push(h);
                next_tap.next();
            }
        }
        Ok((h, features))
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var, taps: &[usize]) -> Result<(Var, Vec<Var>)> {
        self.forward_until(tape, bound, x, self.depth() - 1, taps)
    }
}

/// Checks an image batch lies in `[-1, 1]`.
pub fn check_image_range(t: &Tensor, what: &str) -> Result<()> {
    if let Some(v) = t.data().iter().find(|v| !v.is_finite() || v.abs() > 1.0) {
        return Err(Error::Validation(format!(
            "{what}: value {v} outside [-1, 1] (missing tanh or normalization upstream?)"
        )));
    }
    Ok(())
}
