//! Desk-scale Fréchet distance, analytic complexity accounting, and image
//! dumps.

mod complexity;
mod fid;

use std::fs;
use std::path::{Path, PathBuf};

use crate::autograd::Tape;
use crate::data::write_png;
use crate::error::{IoContext, Result};
use crate::nets::{Binding, DownsamplerBank, Generator};
use crate::tensor::Tensor;

pub use complexity::{count_complexity, count_params, ComplexityReport, LayerCost};
pub use fid::{
    desk_fid, embed_batch, frechet_distance, gaussian_stats, generate, sqrtm_psd, FidReport, GaussianStats, EVAL_CHUNK,
    PSD_TOLERANCE,
};

/// Writes `G(x)` for each input as `step{step:06}_sample{i:03}.png`.
pub fn dump_samples(generator: &Generator, inputs: &Tensor, out_dir: &Path, step: u64) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).at(out_dir)?;
    let out = generate(generator, inputs)?;
    let n = out.dims4()?.0;
    (0..n)
        .map(|i| {
            let path = out_dir.join(format!("step{step:06}_sample{i:03}.png"));
            write_png(&path, &out.select(i)?)?;
            Ok(path)
        })
        .collect()
}

/// Projects each tap's features through `bank` at `target_hw` and writes
/// `step{step:06}_sample{i:03}_tap{j}.png`.
pub fn dump_feature_images(
    bank: &DownsamplerBank,
    feats: &[Tensor],
    target_hw: (usize, usize),
    out_dir: &Path,
    step: u64,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).at(out_dir)?;
    let mut tape = Tape::new();
    let bound = bank.bind(&mut tape, Binding::Constant);
    let mut written = Vec::new();
    for (j, f) in feats.iter().enumerate() {
        let x = tape.constant(f.clone());
        let img = bank.project(&mut tape, &bound, j, x, target_hw)?;
        let img = tape.value(img);
        for i in 0..img.dims4()?.0 {
            let path = out_dir.join(format!("step{step:06}_sample{i:03}_tap{j}.png"));
            write_png(&path, &img.select(i)?)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests;
