//! Named parameter arrays with per-parameter frozen flags, content digests,
//! and the on-disk weights format.
//!
//! A weights directory holds one raw little-endian array file per parameter
//! path (`<path>.bin`) and a plain-text `manifest.txt`:
//!
//! ```text
//! dcd-weights 1
//! digest <set digest>
//! tensor <path> <f32|f64> <d0>x<d1>x... <array digest>
//! ```
//!
//! Digests are SHA-256 over the canonical little-endian `f64` serialization,
//! so an `f32` file is digested after widening.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub frozen: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    entries: BTreeMap<String, Parameter>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, value: Tensor, frozen: bool) {
        self.entries.insert(path.into(), Parameter { value, frozen });
    }

    pub fn get(&self, path: &str) -> Option<&Parameter> {
        self.entries.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Parameter> {
        self.entries.get_mut(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Number of named arrays.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all arrays.
    pub fn numel(&self) -> usize {
        self.entries.values().map(|p| p.value.numel()).sum()
    }

    pub fn freeze_all(&mut self) {
        self.entries.values_mut().for_each(|p| p.frozen = true);
    }

    pub fn all_frozen(&self) -> bool {
        self.entries.values().all(|p| p.frozen)
    }

    /// Concatenation of every array in path order.
    pub fn flatten(&self) -> Vec<f64> {
        self.entries
            .values()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    pub fn digest(&self) -> Result<String> {
        parameter_digest(self)
    }

    pub fn save(&self, dir: &Path, dtype: DType) -> Result<()> {
        fs::create_dir_all(dir).at(dir)?;
        // The manifest describes what a reader gets back, so f32 storage is
        // digested after the narrowing round trip.
        let stored = match dtype {
            DType::F32 => {
                let mut narrowed = self.clone();
                narrowed
                    .entries
                    .values_mut()
                    .for_each(|p| p.value = p.value.map(|v| v as f32 as f64));
                narrowed
            }
            DType::F64 => self.clone(),
        };
        let mut manifest = String::from("dcd-weights 1\n");
        writeln!(manifest, "digest {}", stored.digest()?).unwrap();
        for (path, param) in &stored.entries {
            let bytes: Vec<u8> = match dtype {
                DType::F32 => param
                    .value
                    .data()
                    .iter()
                    .flat_map(|v| (*v as f32).to_le_bytes())
                    .collect(),
                DType::F64 => param.value.to_le_bytes(),
            };
            let file = dir.join(format!("{path}.bin"));
            fs::write(&file, bytes).at(&file)?;
            writeln!(
                manifest,
                "tensor {path} {} {} {}",
                dtype.name(),
                format_shape(param.value.shape()),
                array_digest(&param.value)
            )
            .unwrap();
        }
        let file = dir.join("manifest.txt");
        fs::write(&file, manifest).at(&file)
    }

    /// Replaces the values of every parameter with the arrays stored in
    /// `dir`. Names and shapes must match exactly; frozen flags are kept.
    pub fn load_from(&mut self, dir: &Path) -> Result<()> {
        let manifest = read_manifest(dir)?;
        for path in self.entries.keys() {
            if !manifest.tensors.contains_key(path) {
                return Err(Error::Corruption(format!(
                    "{}: manifest has no entry for `{path}`",
                    dir.display()
                )));
            }
        }
        for (path, entry) in &manifest.tensors {
            let param = self.entries.get_mut(path).ok_or_else(|| {
                Error::Corruption(format!("{}: unexpected parameter `{path}`", dir.display()))
            })?;
            if param.value.shape() != entry.shape.as_slice() {
                return Err(Error::Corruption(format!(
                    "{}: `{path}` has shape {:?}, expected {:?}",
                    dir.display(),
                    entry.shape,
                    param.value.shape()
                )));
            }
            param.value = read_array(dir, path, entry)?;
        }
        let digest = self.digest()?;
        if let Some(expected) = &manifest.digest {
            if &digest != expected {
                return Err(Error::Corruption(format!(
                    "{}: set digest {digest} does not match manifest {expected}",
                    dir.display()
                )));
            }
        }
        Ok(())
    }

    /// Reads every array stored in `dir` into a new set of frozen
    /// parameters, verifying all digests.
    pub fn read(dir: &Path) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        let mut set = Self::new();
        for (path, entry) in &manifest.tensors {
            set.insert(path.clone(), read_array(dir, path, entry)?, true);
        }
        let digest = set.digest()?;
        match &manifest.digest {
            Some(expected) if &digest != expected => Err(Error::Corruption(format!(
                "{}: set digest {digest} does not match manifest {expected}",
                dir.display()
            ))),
            _ => Ok(set),
        }
    }

    /// Reads the set digest recorded in a weights manifest.
    pub fn manifest_digest(dir: &Path) -> Result<String> {
        read_manifest(dir)?
            .digest
            .ok_or_else(|| Error::Corruption(format!("{}: manifest lacks a digest line", dir.display())))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Stable content hash of a parameter set: SHA-256 over, in path order,
/// each path, its shape, and its values as little-endian `f64`.
pub fn parameter_digest(params: &ParameterSet) -> Result<String> {
    let mut hasher = Sha256::new();
    for (path, param) in &params.entries {
        if !param.value.is_finite() {
            return Err(Error::NonFiniteParameter(path.clone()));
        }
        hasher.update((path.len() as u64).to_le_bytes());
        hasher.update(path.as_bytes());
        hasher.update((param.value.shape().len() as u64).to_le_bytes());
        for &d in param.value.shape() {
            hasher.update((d as u64).to_le_bytes());
        }
        hasher.update(param.value.to_le_bytes());
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn array_digest(t: &Tensor) -> String {
    hex::encode(Sha256::digest(t.to_le_bytes()))
}

fn format_shape(shape: &[usize]) -> String {
    if shape.is_empty() {
        "scalar".into()
    } else {
        shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
    }
}

fn parse_shape(s: &str) -> Option<Vec<usize>> {
    if s == "scalar" {
        return Some(Vec::new());
    }
    s.split('x').map(|d| d.parse().ok()).collect()
}

struct ManifestEntry {
    dtype: DType,
    shape: Vec<usize>,
    digest: String,
}

struct Manifest {
    digest: Option<String>,
    tensors: BTreeMap<String, ManifestEntry>,
}

fn read_manifest(dir: &Path) -> Result<Manifest> {
    let file = dir.join("manifest.txt");
    let text = fs::read_to_string(&file).map_err(|e| {
        Error::Corruption(format!("cannot read {}: {e}", file.display()))
    })?;
    let mut lines = text.lines();
    if lines.next() != Some("dcd-weights 1") {
        return Err(Error::Corruption(format!("{}: bad header", file.display())));
    }
    let mut manifest = Manifest {
        digest: None,
        tensors: BTreeMap::new(),
    };
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::Corruption(format!("{}:{}: malformed line", file.display(), lineno + 2));
        match fields.as_slice() {
            [] => {}
            ["digest", d] => manifest.digest = Some(d.to_string()),
            ["tensor", path, dtype, shape, digest] => {
                let dtype = match *dtype {
                    "f32" => DType::F32,
                    "f64" => DType::F64,
                    _ => return Err(bad()),
                };
                let shape = parse_shape(shape).ok_or_else(bad)?;
                manifest.tensors.insert(
                    path.to_string(),
                    ManifestEntry {
                        dtype,
                        shape,
                        digest: digest.to_string(),
                    },
                );
            }
            _ => return Err(bad()),
        }
    }
    Ok(manifest)
}

fn read_array(dir: &Path, path: &str, entry: &ManifestEntry) -> Result<Tensor> {
    let file = dir.join(format!("{path}.bin"));
    let bytes = fs::read(&file).map_err(|e| {
        Error::Corruption(format!("cannot read {}: {e}", file.display()))
    })?;
    let numel: usize = entry.shape.iter().product();
    if bytes.len() != numel * entry.dtype.width() {
        return Err(Error::Corruption(format!(
            "{}: expected {} bytes, found {}",
            file.display(),
            numel * entry.dtype.width(),
            bytes.len()
        )));
    }
    let data = match entry.dtype {
        DType::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    let tensor = Tensor::new(entry.shape.clone(), data)?;
    if array_digest(&tensor) != entry.digest {
        return Err(Error::Corruption(format!(
            "{}: array digest mismatch",
            file.display()
        )));
    }
    Ok(tensor)
}
