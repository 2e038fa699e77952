use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{bind, Binding, Block, Bound, ConvInit, Layer, Network};
use crate::autograd::{Tape, Var};
use crate::config::{validate_taps, WidthFactor};
use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::tensor::Tensor;

/// ResNet image-to-image generator family: 7x7 stem, two stride-2
/// downsamplers, `n_resblocks` residual blocks, two upsample+conv stages
/// and a 7x7 tanh head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub base_width: usize,
    pub n_resblocks: usize,
    pub width_factor: WidthFactor,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl GeneratorSpec {
    pub fn teacher(base_width: usize, n_resblocks: usize) -> Self {
        Self {
            base_width,
            n_resblocks,
            width_factor: WidthFactor::ONE,
            in_channels: 3,
            out_channels: 3,
        }
    }

    pub fn with_width_factor(&self, width_factor: WidthFactor) -> Self {
        Self {
            width_factor,
            ..self.clone()
        }
    }

    /// Channel counts of the stem, middle and trunk stages.
    pub fn widths(&self) -> [usize; 3] {
        let wf = self.width_factor;
        [
            wf.apply(self.base_width),
            wf.apply(2 * self.base_width),
            wf.apply(4 * self.base_width),
        ]
    }

    pub fn depth(&self) -> usize {
        self.n_resblocks + 6
    }

    pub fn network(&self) -> Network {
        let [w1, w2, w4] = self.widths();
        let mut blocks = Vec::with_capacity(self.depth());
        let seq = |name: &str, layers| Block {
            name: name.to_string(),
            layers,
            residual: false,
        };
        blocks.push(seq(
            "stem",
            vec![Layer::conv("stem.conv", self.in_channels, w1, 7, 1, 3), Layer::norm("stem.norm", w1), Layer::Relu],
        ));
        blocks.push(seq(
            "down1",
            vec![Layer::conv("down1.conv", w1, w2, 3, 2, 1), Layer::norm("down1.norm", w2), Layer::Relu],
        ));
        blocks.push(seq(
            "down2",
            vec![Layer::conv("down2.conv", w2, w4, 3, 2, 1), Layer::norm("down2.norm", w4), Layer::Relu],
        ));
        for r in 0..self.n_resblocks {
            let p = format!("res{r}");
            blocks.push(Block {
                name: p.clone(),
                layers: vec![
                    Layer::conv(format!("{p}.conv1"), w4, w4, 3, 1, 1),
                    Layer::norm(format!("{p}.norm1"), w4),
                    Layer::Relu,
                    Layer::conv(format!("{p}.conv2"), w4, w4, 3, 1, 1),
                    Layer::norm(format!("{p}.norm2"), w4),
                ],
                residual: true,
            });
        }
        blocks.push(seq(
            "up1",
            vec![
                Layer::Upsample(2),
                Layer::conv("up1.conv", w4, w2, 3, 1, 1),
                Layer::norm("up1.norm", w2),
                Layer::Relu,
            ],
        ));
        blocks.push(seq(
            "up2",
            vec![
                Layer::Upsample(2),
                Layer::conv("up2.conv", w2, w1, 3, 1, 1),
                Layer::norm("up2.norm", w1),
                Layer::Relu,
            ],
        ));
        blocks.push(seq(
            "head",
            vec![Layer::conv("head.conv", w1, self.out_channels, 7, 1, 3), Layer::Tanh],
        ));
        Network { blocks }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("generator widths and channel counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub spec: GeneratorSpec,
    pub net: Network,
    pub params: ParameterSet,
}

pub fn build_generator<R: Rng + ?Sized>(spec: &GeneratorSpec, rng: &mut R) -> Result<Generator> {
    spec.validate()?;
    let net = spec.network();
    let params = net.init_params(ConvInit::Normal(0.02), rng);
    Ok(Generator {
        spec: spec.clone(),
        net,
        params,
    })
}

impl Generator {
    pub fn bind(&self, tape: &mut Tape, binding: Binding) -> Bound {
        bind(tape, &self.params, binding)
    }

    /// Output image and raw (pre-projection) activations at `taps`.
    pub fn forward_with_taps(&self, tape: &mut Tape, bound: &Bound, x: Var, taps: &[usize]) -> Result<(Var, Vec<Var>)> {
        let (_, c, h, w) = tape.value(x).dims4()?;
        if c != self.spec.in_channels {
            return Err(Error::Shape(format!(
                "generator expects {} input channels, got {c}",
                self.spec.in_channels
            )));
        }
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Shape(format!(
                "generator input {h}x{w} is not divisible by 4"
            )));
        }
        validate_taps("generator_taps", taps, self.net.depth(), true)?;
        self.net.forward(tape, bound, x, taps)
    }

    /// Gradient-free forward pass.
    pub fn run(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, Binding::Constant);
        let xv = tape.constant(x.clone());
        let (out, _) = self.forward_with_taps(&mut tape, &bound, xv, &[])?;
        Ok(tape.value(out).clone())
    }

    /// Channel count of each tapped block output.
    pub fn tap_channels(&self, taps: &[usize]) -> Result<Vec<usize>> {
        validate_taps("generator_taps", taps, self.net.depth(), true)?;
        let shapes = self.net.block_shapes((self.spec.in_channels, 4, 4))?;
        Ok(taps.iter().map(|&t| shapes[t].0).collect())
    }
}
