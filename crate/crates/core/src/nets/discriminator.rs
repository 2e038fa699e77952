use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{bind, check_image_range, Binding, Block, Bound, ConvInit, Layer, Network, LEAKY_SLOPE};
use crate::autograd::{Tape, Var};
use crate::config::validate_taps;
use crate::error::{Error, Result};
use crate::params::ParameterSet;

/// Patch discriminator: stride-2 4x4 conv blocks with leaky ReLU (instance
/// norm on all but the first), then a 3x3 conv head emitting one score per
/// patch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub widths: Vec<usize>,
    pub in_channels: usize,
}

impl DiscriminatorSpec {
    /// `[64, 128, 256, 512]` divided by `desk_divisor`.
    pub fn scaled(desk_divisor: usize) -> Self {
        Self {
            widths: [64, 128, 256, 512].iter().map(|w| (w / desk_divisor).max(1)).collect(),
            in_channels: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels != 3 {
            return Err(Error::Shape(format!(
                "discriminator input must have 3 channels, got {}",
                self.in_channels
            )));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config("discriminator widths must be a non-empty list of positive counts".into()));
        }
        Ok(())
    }

    pub fn network(&self) -> Network {
        let mut blocks = Vec::with_capacity(self.widths.len() + 1);
        let mut c = self.in_channels;
        for (i, &w) in self.widths.iter().enumerate() {
            let name = format!("block{i}");
            let mut layers = vec![Layer::conv(format!("{name}.conv"), c, w, 4, 2, 1)];
            if i > 0 {
                layers.push(Layer::norm(format!("{name}.norm"), w));
            }
            layers.push(Layer::LeakyRelu(LEAKY_SLOPE));
            blocks.push(Block {
                name,
                layers,
                residual: false,
            });
            c = w;
        }
        blocks.push(Block {
            name: "head".into(),
            layers: vec![Layer::conv("head.conv", c, 1, 3, 1, 1)],
            residual: false,
        });
        Network { blocks }
    }
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    pub spec: DiscriminatorSpec,
    pub net: Network,
    pub params: ParameterSet,
}

pub fn build_discriminator<R: Rng + ?Sized>(spec: &DiscriminatorSpec, rng: &mut R) -> Result<Discriminator> {
    spec.validate()?;
    let net = spec.network();
    let params = net.init_params(ConvInit::Normal(0.02), rng);
    Ok(Discriminator {
        spec: spec.clone(),
        net,
        params,
    })
}

impl Discriminator {
    pub fn bind(&self, tape: &mut Tape, binding: Binding) -> Bound {
        bind(tape, &self.params, binding)
    }

    /// Number of tappable conv blocks (the score head is not tappable).
    pub fn depth(&self) -> usize {
        self.spec.widths.len()
    }

    fn check_input(&self, tape: &Tape, img: Var) -> Result<()> {
        let v = tape.value(img);
        let (_, c, _, _) = v.dims4()?;
        if c != self.spec.in_channels {
            return Err(Error::Shape(format!(
                "discriminator expects {} channels, got {c}",
                self.spec.in_channels
            )));
        }
        check_image_range(v, "discriminator input")
    }

    /// Raw patch scores and the outputs of the conv blocks listed in `taps`.
    pub fn forward_with_taps(&self, tape: &mut Tape, bound: &Bound, img: Var, taps: &[usize]) -> Result<(Var, Vec<Var>)> {
        self.check_input(tape, img)?;
        validate_taps("discriminator_taps", taps, self.depth(), true)?;
        self.net.forward(tape, bound, img, taps)
    }

    /// Tapped block outputs only; stops after the last tap.
    pub fn features(&self, tape: &mut Tape, bound: &Bound, img: Var, taps: &[usize]) -> Result<Vec<Var>> {
        self.check_input(tape, img)?;
        validate_taps("discriminator_taps", taps, self.depth(), false)?;
        let last = *taps.last().expect("non-empty taps");
        let (_, feats) = self.net.forward_until(tape, bound, img, last, taps)?;
        Ok(feats)
    }
}
