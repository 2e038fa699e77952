use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{Layer, Network};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub kind: String,
    pub params: u64,
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub resolution: usize,
    pub total_params: u64,
    pub total_macs: u64,
    pub layers: Vec<LayerCost>,
}

impl ComplexityReport {
    /// Per-layer entries sum to the totals.
    pub fn is_consistent(&self) -> bool {
        self.layers.iter().map(|l| l.params).sum::<u64>() == self.total_params
            && self.layers.iter().map(|l| l.macs).sum::<u64>() == self.total_macs
    }
}

/// Parameters and multiply-accumulates of `net` on a
/// `(channels, resolution, resolution)` input. Convolutions count
/// `k·k·Cin·Cout (+ Cout bias)` parameters and `k·k·Cin·Cout·Ho·Wo` MACs;
/// instance norms count their affine parameters; activations, resizes and
/// residual additions are free.
pub fn count_complexity(net: &Network, channels: usize, resolution: usize) -> Result<ComplexityReport> {
    let mut shape = (channels, resolution, resolution);
    let mut layers = Vec::new();
    for block in &net.blocks {
        let block_in = shape;
        for (i, layer) in block.layers.iter().enumerate() {
            let out = layer.output_shape(shape)?;
            let (name, macs) = match layer {
                Layer::Conv { name, in_ch, out_ch, kernel, .. } => {
                    (name.clone(), (kernel * kernel * in_ch * out_ch * out.1 * out.2) as u64)
                }
                Layer::InstanceNorm { name, .. } => (name.clone(), 0),
                other => (format!("{}.{}{i}", block.name, other.kind()), 0),
            };
            layers.push(LayerCost { name, kind: layer.kind().to_string(), params: layer_params(layer), macs });
            shape = out;
        }
        if block.residual && shape != block_in {
            return Err(Error::Shape(format!(
                "block {}: residual shapes differ ({block_in:?} vs {shape:?})",
                block.name
            )));
        }
    }
    Ok(ComplexityReport {
        resolution,
        total_params: layers.iter().map(|l| l.params).sum(),
        total_macs: layers.iter().map(|l| l.macs).sum(),
        layers,
    })
}

fn layer_params(layer: &Layer) -> u64 {
    match layer {
        Layer::Conv { in_ch, out_ch, kernel, .. } => (kernel * kernel * in_ch * out_ch + out_ch) as u64,
        Layer::InstanceNorm { channels, .. } => 2 * *channels as u64,
        _ => 0,
    }
}

/// Parameter count alone; resolution-independent.
pub fn count_params(net: &Network) -> u64 {
    net.layers().map(layer_params).sum()
}
