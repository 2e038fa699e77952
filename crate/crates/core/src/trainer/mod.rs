//! Collaborative three-player training: teacher generator, student
//! generator with its projection bank, and one shared discriminator.

mod checkpoint;
mod fit;
mod step;

use std::collections::BTreeMap;

use crate::config::{HyperParams, RunConfig, TapSpec};
use crate::error::{Error, Result};
use crate::nets::{
    build_aligner, build_bank, build_discriminator, build_extractor, build_generator, ChannelAligner, Discriminator,
    DiscriminatorSpec, DownsamplerBank, FeatureExtractor, FeatureExtractorSpec, Generator, GeneratorSpec,
};
use crate::config::WeightsSource;
use crate::optim::Adam;
use crate::params::ParameterSet;
use crate::rng::seeded_rng;

pub use checkpoint::{checkpoint_config, load_checkpoint, save_checkpoint, CheckpointState, CHECKPOINT_FORMAT};
pub use fit::{fit, read_metrics, FidLine, FitSummary, MetricsLine, FID_LOG, METRICS_LOG};
pub use step::train_step;

/// Learning rate for `epoch`: constant for the first half of training, then
/// linear decay reaching 0 at `hp.epochs`.
pub fn lr_at_epoch(epoch: usize, hp: &HyperParams) -> Result<f64> {
    if epoch > hp.epochs {
        return Err(Error::Config(format!("epoch {epoch} beyond the {} scheduled", hp.epochs)));
    }
    let half = hp.epochs as f64 / 2.0;
    let remaining = (hp.epochs - epoch) as f64;
    Ok(hp.lr_initial * (remaining / half).min(1.0))
}

/// Every network taking part in a run.
#[derive(Clone, Debug)]
pub struct Models {
    pub teacher: Generator,
    pub student: Generator,
    pub disc: Discriminator,
    pub teacher_bank: DownsamplerBank,
    pub student_bank: DownsamplerBank,
    /// Present only when the per-pixel baseline term is enabled.
    pub aligner: Option<ChannelAligner>,
    pub extractor: FeatureExtractor,
    pub taps: TapSpec,
    pub resolution: usize,
}

impl Models {
    /// Named parameter groups, in checkpoint order.
    pub fn groups(&self) -> Vec<(&'static str, &ParameterSet)> {
        let mut g = vec![
            ("teacher", &self.teacher.params),
            ("student", &self.student.params),
            ("disc", &self.disc.params),
            ("teacher_bank", &self.teacher_bank.params),
            ("student_bank", &self.student_bank.params),
        ];
        if let Some(a) = &self.aligner {
            g.push(("aligner", &a.params));
        }
        g
    }

    pub fn groups_mut(&mut self) -> Vec<(&'static str, &mut ParameterSet)> {
        let mut g = vec![
            ("teacher", &mut self.teacher.params),
            ("student", &mut self.student.params),
            ("disc", &mut self.disc.params),
            ("teacher_bank", &mut self.teacher_bank.params),
            ("student_bank", &mut self.student_bank.params),
        ];
        if let Some(a) = &mut self.aligner {
            g.push(("aligner", &mut a.params));
        }
        g
    }

    pub fn digests(&self) -> Result<BTreeMap<String, String>> {
        self.groups()
            .into_iter()
            .map(|(name, p)| Ok((name.to_string(), p.digest()?)))
            .collect()
    }

    /// Digests of the groups that must never change during a run.
    pub fn frozen_digests(&self) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for (name, p) in self.groups() {
            if p.all_frozen() {
                out.insert(name.to_string(), p.digest()?);
            }
        }
        out.insert("extractor".to_string(), self.extractor.params.digest()?);
        Ok(out)
    }

    pub fn teacher_frozen(&self) -> bool {
        self.teacher.params.all_frozen()
    }
}

/// Builds freshly initialised models for `cfg`. Each network draws from its
/// own seeded stream, so adding one never shifts another's weights.
pub fn build_models(cfg: &RunConfig) -> Result<Models> {
    let seed = cfg.seed;
    let teacher_spec = GeneratorSpec::teacher(cfg.base_width, cfg.n_resblocks);
    let student_spec = teacher_spec.with_width_factor(cfg.width_factor);
    let mut teacher = build_generator(&teacher_spec, &mut seeded_rng(seed, "teacher"))?;
    if let Some(path) = &cfg.teacher_checkpoint {
        teacher.params.load_from(path)?;
        teacher.params.freeze_all();
    }
    let student = build_generator(&student_spec, &mut seeded_rng(seed, "student"))?;
    let disc = build_discriminator(
        &DiscriminatorSpec {
            widths: cfg.disc_widths.clone(),
            in_channels: 3,
        },
        &mut seeded_rng(seed, "disc"),
    )?;
    let extractor = build_extractor(&FeatureExtractorSpec {
        widths: cfg.extractor_widths.clone(),
        source: cfg.extractor_weights.clone(),
    })?;
    let taps = cfg.tap_spec();
    taps.validate(teacher.net.depth(), disc.depth(), extractor.depth())?;
    let t_ch = teacher.tap_channels(&taps.generator_taps)?;
    let s_ch = student.tap_channels(&taps.generator_taps)?;
    let teacher_bank = build_bank(&t_ch, true, &mut seeded_rng(seed, "teacher_bank"))?;
    let student_bank = build_bank(&s_ch, false, &mut seeded_rng(seed, "student_bank"))?;
    let aligner = if cfg.hp.losses.fea_dis {
        let pairs: Vec<_> = s_ch.iter().copied().zip(t_ch.iter().copied()).collect();
        Some(build_aligner(&pairs, &mut seeded_rng(seed, "aligner"))?)
    } else {
        None
    };
    Ok(Models {
        teacher,
        student,
        disc,
        teacher_bank,
        student_bank,
        aligner,
        extractor,
        taps,
        resolution: cfg.resolution,
    })
}

/// The frozen evaluation embedder of `cfg`.
pub fn build_embedder(cfg: &RunConfig) -> Result<FeatureExtractor> {
    build_extractor(&FeatureExtractorSpec {
        widths: cfg.embedder_widths.clone(),
        source: WeightsSource::FixedRandom(cfg.embedder_seed),
    })
}

/// Position in the schedule plus the three optimizer states.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub epoch: usize,
    /// Batches of `epoch` already consumed.
    pub batch_in_epoch: usize,
    pub opt_teacher: Adam,
    pub opt_student: Adam,
    pub opt_disc: Adam,
    pub frozen_digests: BTreeMap<String, String>,
}

impl TrainState {
    pub fn new(models: &Models) -> Result<Self> {
        Ok(Self {
            step: 0,
            epoch: 0,
            batch_in_epoch: 0,
            opt_teacher: Adam::default(),
            opt_student: Adam::default(),
            opt_disc: Adam::default(),
            frozen_digests: models.frozen_digests()?,
        })
    }

    /// Fails if any frozen group changed since the run started.
    pub fn check_frozen(&self, models: &Models) -> Result<()> {
        let now = models.frozen_digests()?;
        for (name, digest) in &self.frozen_digests {
            if now.get(name) != Some(digest) {
                return Err(Error::Numerical(format!("frozen group `{name}` changed during training")));
            }
        }
        Ok(())
    }
}
