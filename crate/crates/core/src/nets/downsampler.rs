use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{bind, Binding, Bound};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::tensor::Tensor;

/// Per-tap 1x1 projections from `C_i`-channel feature maps to 3-channel
/// feature-images in `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct DownsamplerBank {
    pub channels: Vec<usize>,
    pub params: ParameterSet,
}

pub const FEATURE_IMAGE_CHANNELS: usize = 3;

/// Builds a bank with one projection per tap. Weights are drawn from
/// `N(0, 1/C_i)`, biases start at zero; a frozen bank never changes again.
pub fn build_bank<R: Rng + ?Sized>(channels: &[usize], frozen: bool, rng: &mut R) -> Result<DownsamplerBank> {
    if channels.contains(&0) {
        return Err(Error::Config("downsampler input channels must be positive".into()));
    }
    let mut params = ParameterSet::new();
    for (i, &c) in channels.iter().enumerate() {
        let normal = Normal::new(0.0, (1.0 / c as f64).sqrt()).expect("finite std");
        let w = Tensor::from_fn(&[FEATURE_IMAGE_CHANNELS, c, 1, 1], |_| normal.sample(rng));
        params.insert(format!("tap{i}.weight"), w, frozen);
        params.insert(format!("tap{i}.bias"), Tensor::zeros(&[FEATURE_IMAGE_CHANNELS]), frozen);
    }
    Ok(DownsamplerBank {
        channels: channels.to_vec(),
        params,
    })
}

impl DownsamplerBank {
    /// Identity projections for 3-channel taps.
    pub fn identity(n_taps: usize, frozen: bool) -> Self {
        let mut params = ParameterSet::new();
        for i in 0..n_taps {
            let w = Tensor::from_fn(&[3, 3, 1, 1], |k| if k / 3 == k % 3 { 1.0 } else { 0.0 });
            params.insert(format!("tap{i}.weight"), w, frozen);
            params.insert(format!("tap{i}.bias"), Tensor::zeros(&[3]), frozen);
        }
        Self {
            channels: vec![3; n_taps],
            params,
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.params.all_frozen()
    }

    pub fn bind(&self, tape: &mut Tape, binding: Binding) -> Bound {
        bind(tape, &self.params, binding)
    }

    /// Projects tap `tap_index`'s features to 3 channels, squashes with
    /// tanh, and bilinearly resizes to `target_hw` when sizes differ.
    pub fn project(&self, tape: &mut Tape, bound: &Bound, tap_index: usize, feat: Var, target_hw: (usize, usize)) -> Result<Var> {
        let expected = *self.channels.get(tap_index).ok_or_else(|| {
            Error::Config(format!(
                "downsampler bank has {} taps, tap {tap_index} requested",
                self.channels.len()
            ))
        })?;
        let (_, c, h, w) = tape.value(feat).dims4()?;
        if c != expected {
            return Err(Error::Config(format!(
                "downsampler tap {tap_index} expects {expected} channels, got {c}"
            )));
        }
        let weight = bound.var(&format!("tap{tap_index}.weight"))?;
        let bias = bound.var(&format!("tap{tap_index}.bias"))?;
        let y = tape.conv2d(feat, weight, Some(bias), 1, 0)?;
        let y = tape.tanh(y);
        if (h, w) == target_hw {
            Ok(y)
        } else {
            tape.resize_bilinear(y, target_hw.0, target_hw.1)
        }
    }
}

/// Per-tap trainable 1x1 projections from student to teacher channel
/// counts, used by the per-pixel feature distillation baseline.
#[derive(Clone, Debug)]
pub struct ChannelAligner {
    /// `(student, teacher)` channels per tap.
    pub channels: Vec<(usize, usize)>,
    pub params: ParameterSet,
}

pub fn build_aligner<R: Rng + ?Sized>(channels: &[(usize, usize)], rng: &mut R) -> Result<ChannelAligner> {
    let mut params = ParameterSet::new();
    for (i, &(cs, ct)) in channels.iter().enumerate() {
        if cs == 0 || ct == 0 {
            return Err(Error::Config("aligner channels must be positive".into()));
        }
        let normal = Normal::new(0.0, (1.0 / cs as f64).sqrt()).expect("finite std");
        params.insert(format!("tap{i}.weight"), Tensor::from_fn(&[ct, cs, 1, 1], |_| normal.sample(rng)), false);
        params.insert(format!("tap{i}.bias"), Tensor::zeros(&[ct]), false);
    }
    Ok(ChannelAligner {
        channels: channels.to_vec(),
        params,
    })
}

impl ChannelAligner {
    pub fn bind(&self, tape: &mut Tape, binding: Binding) -> Bound {
        bind(tape, &self.params, binding)
    }

    pub fn align(&self, tape: &mut Tape, bound: &Bound, tap_index: usize, feat: Var) -> Result<Var> {
        let &(cs, _) = self
            .channels
            .get(tap_index)
            .ok_or_else(|| Error::Config(format!("aligner has no tap {tap_index}")))?;
        let (_, c, _, _) = tape.value(feat).dims4()?;
        if c != cs {
            return Err(Error::Config(format!("aligner tap {tap_index} expects {cs} channels, got {c}")));
        }
        let weight = bound.var(&format!("tap{tap_index}.weight"))?;
        let bias = bound.var(&format!("tap{tap_index}.bias"))?;
        tape.conv2d(feat, weight, Some(bias), 1, 0)
    }
}
