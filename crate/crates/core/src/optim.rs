//! Adam over named parameter sets.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.5;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
}

/// Adam with per-parameter moments keyed by `prefix.path`, so one optimizer
/// can step several parameter sets (a generator and its projection bank).
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(ADAM_BETA1, ADAM_BETA2)
    }
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64) -> Self {
        Self { beta1, beta2, eps: ADAM_EPS, step: 0, moments: BTreeMap::new() }
    }

    /// Advances the shared step counter. Call once per update, before the
    /// [`Adam::apply`] calls of that update.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Updates every trainable parameter of `params` in place. Frozen
    /// parameters are left untouched and get no moments.
    pub fn apply(&mut self, prefix: &str, params: &mut ParameterSet, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        if self.step == 0 {
            return Err(Error::Config("Adam::apply called before begin_step".into()));
        }
        let t = self.step as f64;
        let c1 = 1.0 - self.beta1.powf(t);
        let c2 = 1.0 - self.beta2.powf(t);
        for (path, p) in params.iter_mut().filter(|(_, p)| !p.frozen) {
            let g = grads
                .get(path)
                .ok_or_else(|| Error::Config(format!("no gradient for trainable parameter `{prefix}.{path}`")))?;
            if g.shape() != p.value.shape() {
                return Err(Error::Shape(format!(
                    "gradient for `{prefix}.{path}` has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.value.shape()
                )));
            }
            let mom = self.moments.entry(format!("{prefix}.{path}")).or_insert_with(|| Moments {
                m: Tensor::zeros(g.shape()),
                v: Tensor::zeros(g.shape()),
            });
            let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
            let m = mom.m.data_mut();
            let v = mom.v.data_mut();
            for (i, (w, &gi)) in p.value.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                *w -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Moments as a parameter set (`m.<key>`, `v.<key>`) for checkpointing.
    pub fn moments_to_params(&self) -> ParameterSet {
        let mut out = ParameterSet::new();
        for (key, mom) in &self.moments {
            out.insert(format!("m.{key}"), mom.m.clone(), true);
            out.insert(format!("v.{key}"), mom.v.clone(), true);
        }
        out
    }

    pub fn moments_from_params(&mut self, params: &ParameterSet) -> Result<()> {
        let mut moments = BTreeMap::new();
        for (path, p) in params.iter() {
            let Some(key) = path.strip_prefix("m.") else { continue };
            let v = params
                .get(&format!("v.{key}"))
                .ok_or_else(|| Error::Corruption(format!("optimizer state lacks v.{key}")))?;
            moments.insert(key.to_string(), Moments { m: p.value.clone(), v: v.value.clone() });
        }
        if moments.len() * 2 != params.len() {
            return Err(Error::Corruption("optimizer state has unpaired moments".into()));
        }
        self.moments = moments;
        Ok(())
    }
}
