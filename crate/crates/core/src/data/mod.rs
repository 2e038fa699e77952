//! Synthetic translation datasets, image-folder ingestion and batching.
//!
//! Items are `(3, H, W)` tensors in `[-1, 1]`. Synthetic pixels are
//! quantized to 8-bit levels so a dataset written to PNG and read back is
//! bit-identical.

mod scene;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, Task};
use crate::error::{Error, IoContext, Result};
use crate::rng::{seeded_rng, RngSeed};
use crate::tensor::Tensor;

pub use scene::{edge_map, mean_hue_degrees, render_paired, render_unpaired, Domain, Scene};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub task: Task,
    pub resolution: usize,
    pub n_train: usize,
    pub n_eval: usize,
    pub seed: u64,
    /// Hue distance in degrees between the two unpaired domains.
    pub hue_offset: f64,
    pub data_a: Option<PathBuf>,
    pub data_b: Option<PathBuf>,
    pub paired: bool,
}

impl DatasetSpec {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            task: cfg.task.clone(),
            resolution: cfg.resolution,
            n_train: cfg.n_train,
            n_eval: cfg.n_eval,
            seed: cfg.seed.0,
            hue_offset: cfg.hue_offset,
            data_a: cfg.data_a.clone(),
            data_b: cfg.data_b.clone(),
            paired: cfg.paired,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || self.resolution % 4 != 0 {
            return Err(Error::Config(format!("resolution {} must be a positive multiple of 4", self.resolution)));
        }
        if self.n_train == 0 || self.n_eval == 0 {
            return Err(Error::Config("n_train and n_eval must be >= 1".into()));
        }
        if self.task == Task::Folder && (self.data_a.is_none() || self.data_b.is_none()) {
            return Err(Error::Config("task folder needs data_a and data_b".into()));
        }
        Ok(())
    }
}

/// Source images `a` and targets `b`. For paired data `a[i]` maps to `b[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub a: Vec<Tensor>,
    pub b: Vec<Tensor>,
    pub paired: bool,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// Stacks the `a` items at `idx`.
    pub fn batch_a(&self, idx: &[usize]) -> Result<Tensor> {
        stack(&self.a, idx)
    }

    /// Stacks the `b` items at `idx`.
    pub fn batch_b(&self, idx: &[usize]) -> Result<Tensor> {
        stack(&self.b, idx)
    }
}

fn stack(items: &[Tensor], idx: &[usize]) -> Result<Tensor> {
    let picked = idx
        .iter()
        .map(|&i| items.get(i).ok_or_else(|| Error::Shape(format!("item {i} out of range ({})", items.len()))))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&picked)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub eval: Dataset,
}

/// Paired edges-to-blobs items for `split` ("train" or "eval").
pub fn gen_paired_dataset(spec: &DatasetSpec, split: &str, n: usize) -> Dataset {
    let (a, b): (Vec<_>, Vec<_>) = (0..n)
        .map(|i| {
            let mut rng = seeded_rng(RngSeed(spec.seed), &format!("paired/{split}/{i}"));
            render_paired(&Scene::random(&mut rng), spec.resolution)
        })
        .unzip();
    Dataset { a, b, paired: true }
}

/// Unpaired palette-shift items. Each domain renders its own scenes, so
/// indices carry no correspondence.
pub fn gen_unpaired_dataset(spec: &DatasetSpec, split: &str, n: usize) -> Dataset {
    let domain = |d: Domain, tag: &str| {
        (0..n)
            .map(|i| {
                let mut rng = seeded_rng(RngSeed(spec.seed), &format!("unpaired/{split}/{tag}/{i}"));
                render_unpaired(&Scene::random(&mut rng), spec.resolution, d, spec.hue_offset)
            })
            .collect()
    };
    Dataset {
        a: domain(Domain::A, "a"),
        b: domain(Domain::B, "b"),
        paired: false,
    }
}

/// Builds train and eval splits. Folder data is split in file order: the
/// first `n_train` images train, the next `n_eval` evaluate.
pub fn build_datasets(spec: &DatasetSpec) -> Result<Splits> {
    spec.validate()?;
    match spec.task {
        Task::PairedEdges2blobs => Ok(Splits {
            train: gen_paired_dataset(spec, "train", spec.n_train),
            eval: gen_paired_dataset(spec, "eval", spec.n_eval),
        }),
        Task::UnpairedPaletteShift => Ok(Splits {
            train: gen_unpaired_dataset(spec, "train", spec.n_train),
            eval: gen_unpaired_dataset(spec, "eval", spec.n_eval),
        }),
        Task::Folder => {
            let need = spec.n_train + spec.n_eval;
            let load = |p: &Option<PathBuf>| -> Result<Vec<Tensor>> {
                let p = p.as_ref().expect("validated");
                let items = load_image_folder(p, spec.resolution)?;
                if items.len() < need {
                    return Err(Error::Config(format!(
                        "{} holds {} images, n_train + n_eval = {need}",
                        p.display(),
                        items.len()
                    )));
                }
                Ok(items)
            };
            let (mut a, mut b) = (load(&spec.data_a)?, load(&spec.data_b)?);
            if spec.paired && a.len() != b.len() {
                return Err(Error::Config(format!("paired folders differ in size ({} vs {})", a.len(), b.len())));
            }
            a.truncate(need);
            b.truncate(need);
            let (a_eval, b_eval) = (a.split_off(spec.n_train), b.split_off(spec.n_train));
            Ok(Splits {
                train: Dataset { a, b, paired: spec.paired },
                eval: Dataset { a: a_eval, b: b_eval, paired: spec.paired },
            })
        }
    }
}

/// `[0, 255]` to `[-1, 1]`.
pub fn byte_to_unit(v: u8) -> f64 {
    v as f64 / 127.5 - 1.0
}

/// Inverse of [`byte_to_unit`], rounding and clamping.
pub fn unit_to_byte(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Decodes every file of `dir` in lexicographic order, resizing to
/// `resolution x resolution` when needed.
pub fn load_image_folder(dir: &Path, resolution: usize) -> Result<Vec<Tensor>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).at(dir)? {
        let path = entry.at(dir)?.path();
        if path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!("image folder {} is empty", dir.display())));
    }
    files.iter().map(|f| read_png(f, resolution)).collect()
}

/// Reads one raster image into a `(3, r, r)` tensor.
pub fn read_png(path: &Path, resolution: usize) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
    let r = resolution as u32;
    let img = if img.dimensions() == (r, r) {
        img
    } else {
        image::imageops::resize(&img, r, r, image::imageops::FilterType::Triangle)
    };
    let hw = resolution * resolution;
    let raw = img.as_raw();
    Ok(Tensor::from_fn(&[3, resolution, resolution], |k| {
        let (c, p) = (k / hw, k % hw);
        byte_to_unit(raw[p * 3 + c])
    }))
}

/// Writes a `(3, H, W)` tensor in `[-1, 1]` as an 8-bit RGB PNG.
pub fn write_png(path: &Path, t: &Tensor) -> Result<()> {
    let &[3, h, w] = t.shape() else {
        return Err(Error::Shape(format!("expected a (3, H, W) image, got {:?}", t.shape())));
    };
    let hw = h * w;
    let mut buf = vec![0u8; hw * 3];
    for (p, px) in buf.chunks_exact_mut(3).enumerate() {
        for (c, v) in px.iter_mut().enumerate() {
            *v = unit_to_byte(t.data()[c * hw + p]);
        }
    }
    image::save_buffer(path, &buf, w as u32, h as u32, image::ExtendedColorType::Rgb8).map_err(|e| image_err(path, e))
}

/// Batches of indices for one epoch: a permutation derived from
/// `(seed, epoch)`, cut into full batches; the remainder is dropped.
pub fn batch_iterator(len: usize, batch_size: usize, seed: RngSeed, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    if batch_size > len {
        return Err(Error::Config(format!("batch_size {batch_size} exceeds dataset size {len}")));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut seeded_rng(seed, &format!("batches/{epoch}")));
    Ok(order.chunks_exact(batch_size).map(<[usize]>::to_vec).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub format: String,
    pub spec: DatasetSpec,
    pub files: Vec<String>,
    pub digest: String,
}

pub const DATA_MANIFEST: &str = "manifest.json";

/// Writes `splits` as `out/a/NNNNN.png` and `out/b/NNNNN.png` (train items
/// first, then eval) plus a manifest with the spec and a content digest.
/// Loading `out/a` and `out/b` as a folder task with the same counts gives
/// back the same splits.
pub fn write_dataset(out: &Path, spec: &DatasetSpec, splits: &Splits) -> Result<DataManifest> {
    let mut files = Vec::new();
    let mut hasher = Sha256::new();
    for (side, train, eval) in [("a", &splits.train.a, &splits.eval.a), ("b", &splits.train.b, &splits.eval.b)] {
        let dir = out.join(side);
        fs::create_dir_all(&dir).at(&dir)?;
        for (i, item) in train.iter().chain(eval.iter()).enumerate() {
            let rel = format!("{side}/{i:05}.png");
            let path = out.join(&rel);
            write_png(&path, item)?;
            let bytes = fs::read(&path).at(&path)?;
            hasher.update((rel.len() as u64).to_le_bytes());
            hasher.update(rel.as_bytes());
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(&bytes);
            files.push(rel);
        }
    }
    let manifest = DataManifest {
        format: "dcd-data 1".into(),
        spec: spec.clone(),
        files,
        digest: hex::encode(hasher.finalize()),
    };
    let path = out.join(DATA_MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Corruption(e.to_string()))?;
    fs::write(&path, text).at(&path)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests;
