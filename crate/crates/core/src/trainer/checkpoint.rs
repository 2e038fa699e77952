//! Checkpoints: one weights directory per parameter group and optimizer,
//! plus `state.json` holding the schedule position, digests and a config
//! echo. Arrays are stored as f64 so a resumed run continues bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_models, Models, TrainState};
use crate::config::RunConfig;
use crate::error::{Error, IoContext, Result};
use crate::params::{DType, ParameterSet};

pub const CHECKPOINT_FORMAT: &str = "dcd-checkpoint 1";
const STATE_FILE: &str = "state.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointState {
    pub format: String,
    pub step: u64,
    pub epoch: usize,
    pub batch_in_epoch: usize,
    /// Update counts of the teacher, student and discriminator optimizers.
    pub optimizer_steps: BTreeMap<String, u64>,
    pub digests: BTreeMap<String, String>,
    pub frozen_digests: BTreeMap<String, String>,
    /// The run configuration in key-value form.
    pub config: String,
}

fn optimizers(state: &TrainState) -> [(&'static str, &crate::optim::Adam); 3] {
    [
        ("opt_teacher", &state.opt_teacher),
        ("opt_student", &state.opt_student),
        ("opt_disc", &state.opt_disc),
    ]
}

/// Writes a checkpoint to `dir`, replacing any previous one only once the
/// new one is complete.
pub fn save_checkpoint(dir: &Path, models: &Models, state: &TrainState, cfg: &RunConfig) -> Result<()> {
    let tmp = dir.with_extension("partial");
    if tmp.exists() {
        fs::remove_dir_all(&tmp).at(&tmp)?;
    }
    fs::create_dir_all(&tmp).at(&tmp)?;
    for (name, params) in models.groups() {
        params.save(&tmp.join(name), DType::F64)?;
    }
    for (name, opt) in optimizers(state) {
        opt.moments_to_params().save(&tmp.join(name), DType::F64)?;
    }
    let meta = CheckpointState {
        format: CHECKPOINT_FORMAT.into(),
        step: state.step,
        epoch: state.epoch,
        batch_in_epoch: state.batch_in_epoch,
        optimizer_steps: optimizers(state).iter().map(|(n, o)| (n.to_string(), o.step)).collect(),
        digests: models.digests()?,
        frozen_digests: state.frozen_digests.clone(),
        config: cfg.to_kv_string(),
    };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Corruption(e.to_string()))?;
    let path = tmp.join(STATE_FILE);
    fs::write(&path, text).at(&path)?;
    if dir.exists() {
        fs::remove_dir_all(dir).at(dir)?;
    }
    fs::rename(&tmp, dir).at(dir)
}

fn read_state(dir: &Path) -> Result<CheckpointState> {
    let path = dir.join(STATE_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Corruption(format!("{}: {e}", path.display())))?;
    let meta: CheckpointState =
        serde_json::from_str(&text).map_err(|e| Error::Corruption(format!("{}: {e}", path.display())))?;
    if meta.format != CHECKPOINT_FORMAT {
        return Err(Error::Corruption(format!("{}: unknown format `{}`", path.display(), meta.format)));
    }
    Ok(meta)
}

/// The configuration a checkpoint was written with.
pub fn checkpoint_config(dir: &Path) -> Result<RunConfig> {
    RunConfig::parse(&read_state(dir)?.config)
}

/// Rebuilds models for `cfg` and restores every parameter group and
/// optimizer state from `dir`, verifying all digests.
pub fn load_checkpoint(dir: &Path, cfg: &RunConfig) -> Result<(Models, TrainState)> {
    let meta = read_state(dir)?;
    let mut models = build_models(cfg)?;
    for (name, params) in models.groups_mut() {
        params.load_from(&dir.join(name))?;
        let digest = params.digest()?;
        match meta.digests.get(name) {
            Some(d) if *d == digest => {}
            Some(d) => {
                return Err(Error::Corruption(format!("group `{name}` digest {digest} does not match recorded {d}")))
            }
            None => return Err(Error::Corruption(format!("checkpoint records no digest for `{name}`"))),
        }
    }
    if meta.digests.len() != models.groups().len() {
        return Err(Error::Corruption("checkpoint parameter groups do not match the configuration".into()));
    }
    let mut state = TrainState::new(&models)?;
    state.step = meta.step;
    state.epoch = meta.epoch;
    state.batch_in_epoch = meta.batch_in_epoch;
    for (name, opt) in [
        ("opt_teacher", &mut state.opt_teacher),
        ("opt_student", &mut state.opt_student),
        ("opt_disc", &mut state.opt_disc),
    ] {
        opt.moments_from_params(&ParameterSet::read(&dir.join(name))?)?;
        opt.step = *meta
            .optimizer_steps
            .get(name)
            .ok_or_else(|| Error::Corruption(format!("checkpoint records no step count for `{name}`")))?;
    }
    if state.frozen_digests != meta.frozen_digests {
        return Err(Error::Corruption("frozen parameter digests differ from the checkpoint's record".into()));
    }
    Ok((models, state))
}
