use serde::{Deserialize, Serialize};

use super::{bind, Binding, Block, ConvInit, Layer, Network};
use crate::autograd::{Tape, Var};
use crate::config::{validate_taps, WeightsSource};
use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::rng::seeded_rng;
use crate::tensor::Tensor;

/// Fixed convolutional feature extractor: stride-2 3x3 conv + ReLU blocks.
/// Used both as the perceptual network and as the desk-FID embedder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractorSpec {
    pub widths: Vec<usize>,
    pub source: WeightsSource,
}

impl FeatureExtractorSpec {
    pub fn network(&self) -> Network {
        let mut c = 3;
        let blocks = self
            .widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let block = Block {
                    name: format!("block{i}"),
                    layers: vec![Layer::conv(format!("block{i}.conv"), c, w, 3, 2, 1), Layer::Relu],
                    residual: false,
                };
                c = w;
                block
            })
            .collect();
        Network { blocks }
    }
}

#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub spec: FeatureExtractorSpec,
    pub net: Network,
    /// Permanently frozen.
    pub params: ParameterSet,
}

pub fn build_extractor(spec: &FeatureExtractorSpec) -> Result<FeatureExtractor> {
    if spec.widths.is_empty() || spec.widths.contains(&0) {
        return Err(Error::Config("extractor widths must be a non-empty list of positive counts".into()));
    }
    let net = spec.network();
    let seed = match &spec.source {
        WeightsSource::FixedRandom(seed) => *seed,
        WeightsSource::File(_) => Default::default(),
    };
    let mut rng = seeded_rng(seed, "extractor");
    let mut params = net.init_params(ConvInit::FanIn(2.0), &mut rng);
    if let WeightsSource::File(path) = &spec.source {
        params.load_from(path)?;
    }
    params.freeze_all();
    Ok(FeatureExtractor {
        spec: spec.clone(),
        net,
        params,
    })
}

impl FeatureExtractor {
    pub fn depth(&self) -> usize {
        self.net.depth()
    }

    /// Activations of the tapped blocks for a 3-channel image batch.
    pub fn forward_with_taps(&self, tape: &mut Tape, img: Var, taps: &[usize]) -> Result<Vec<Var>> {
        let (_, c, _, _) = tape.value(img).dims4()?;
        if c != 3 {
            return Err(Error::Shape(format!("feature extractor expects 3 channels, got {c}")));
        }
        validate_taps("extractor_taps", taps, self.depth(), false)?;
        let bound = bind(tape, &self.params, Binding::Constant);
        let last = *taps.last().expect("non-empty taps");
        let (_, feats) = self.net.forward_until(tape, &bound, img, last, taps)?;
        Ok(feats)
    }

    /// Global-average-pooled final block, one vector per image.
    pub fn embed(&self, imgs: &Tensor) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let x = tape.constant(imgs.clone());
        let last = self.depth() - 1;
        let feats = self.forward_with_taps(&mut tape, x, &[last])?;
        let pooled = tape.global_avg_pool(feats[0])?;
        let v = tape.value(pooled);
        let d = v.shape()[1];
        Ok(v.data().chunks(d).map(<[f64]>::to_vec).collect())
    }

    pub fn embedding_dim(&self) -> usize {
        *self.spec.widths.last().expect("non-empty widths")
    }
}
