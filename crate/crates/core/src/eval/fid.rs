use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{check_image_range, FeatureExtractor, Generator};
use crate::tensor::Tensor;

/// Eigenvalues down to `-PSD_TOLERANCE * max(1, |λ|max)` are treated as
/// rounding noise and clipped to zero.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Images per forward pass when embedding or generating for evaluation.
pub const EVAL_CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub n: usize,
}

/// Embeds a `(N, 3, H, W)` batch with the frozen evaluation embedder.
pub fn embed_batch(embedder: &FeatureExtractor, imgs: &Tensor) -> Result<Vec<Vec<f64>>> {
    check_image_range(imgs, "embedder input")?;
    let n = imgs.dims4()?.0;
    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(EVAL_CHUNK) {
        let idx: Vec<usize> = (start..n.min(start + EVAL_CHUNK)).collect();
        out.extend(embedder.embed(&take(imgs, &idx)?)?);
    }
    Ok(out)
}

pub(crate) fn take(batch: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let items = idx.iter().map(|&i| batch.select(i)).collect::<Result<Vec<_>>>()?;
    Tensor::stack(&items.iter().collect::<Vec<_>>())
}

/// Sample mean and unbiased covariance, symmetrized.
pub fn gaussian_stats(vectors: &[Vec<f64>]) -> Result<GaussianStats> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::Numerical(format!("need at least 2 vectors for statistics, got {n}")));
    }
    let d = vectors[0].len();
    if d == 0 || vectors.iter().any(|v| v.len() != d) {
        return Err(Error::Shape("vectors must share a positive dimension".into()));
    }
    let x = DMatrix::from_fn(n, d, |i, j| vectors[i][j]);
    let mean = DVector::from_fn(d, |j, _| x.column(j).sum() / n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let s = centered.transpose() * &centered / (n - 1) as f64;
    let cov = (&s + s.transpose()) * 0.5;
    Ok(GaussianStats { mean, cov, n })
}

fn clipped_eigen(m: &DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (m + m.transpose()) * 0.5;
    let mut eig = sym.symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for v in eig.eigenvalues.iter_mut() {
        if *v < 0.0 {
            if *v < -PSD_TOLERANCE * scale {
                return Err(Error::Numerical(format!("{what} is not positive semidefinite (eigenvalue {v:e})")));
            }
            *v = 0.0;
        }
    }
    Ok(eig)
}

/// Principal square root of a symmetric PSD matrix.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = clipped_eigen(m, "matrix")?;
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// `|μa - μb|² + Tr(Σa + Σb - 2 (Σa^½ Σb Σa^½)^½)`.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(Error::Shape(format!(
            "statistics dimensions differ ({} vs {})",
            a.mean.len(),
            b.mean.len()
        )));
    }
    let root_a = sqrtm_psd(&a.cov)?;
    let inner = &root_a * &b.cov * &root_a;
    let cross = clipped_eigen(&inner, "covariance product")?;
    let trace_cross: f64 = cross.eigenvalues.iter().map(|v| v.sqrt()).sum();
    clipped_eigen(&b.cov, "covariance")?;
    let dmu = (&a.mean - &b.mean).norm_squared();
    Ok((dmu + a.cov.trace() + b.cov.trace() - 2.0 * trace_cross).max(0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidReport {
    pub desk_fid: f64,
    pub n_samples: usize,
    pub embedder_digest: String,
}

/// Runs a generator over `(N, 3, H, W)` inputs in chunks.
pub fn generate(generator: &Generator, inputs: &Tensor) -> Result<Tensor> {
    let n = inputs.dims4()?.0;
    let mut outs = Vec::with_capacity(n);
    for start in (0..n).step_by(EVAL_CHUNK) {
        let idx: Vec<usize> = (start..n.min(start + EVAL_CHUNK)).collect();
        let out = generator.run(&take(inputs, &idx)?)?;
        for i in 0..idx.len() {
            outs.push(out.select(i)?);
        }
    }
    Tensor::stack(&outs.iter().collect::<Vec<_>>())
}

/// Fréchet distance between embedder statistics of `G(x)` and real `y`,
/// using the first `n_samples` items of each. Values are only comparable
/// under the same embedder digest.
pub fn desk_fid(generator: &Generator, x: &Tensor, real: &Tensor, embedder: &FeatureExtractor, n_samples: usize) -> Result<FidReport> {
    let (nx, ny) = (x.dims4()?.0, real.dims4()?.0);
    if n_samples < 2 || n_samples > nx.min(ny) {
        return Err(Error::Config(format!(
            "n_samples {n_samples} must be in [2, {}]",
            nx.min(ny)
        )));
    }
    let idx: Vec<usize> = (0..n_samples).collect();
    let fake = generate(generator, &take(x, &idx)?)?;
    let fake_stats = gaussian_stats(&embed_batch(embedder, &fake)?)?;
    let real_stats = gaussian_stats(&embed_batch(embedder, &take(real, &idx)?)?)?;
    Ok(FidReport {
        desk_fid: frechet_distance(&fake_stats, &real_stats)?,
        n_samples,
        embedder_digest: embedder.params.digest()?,
    })
}
