//! Run configuration: hyperparameters, architecture, taps, data and
//! schedule settings, read from and echoed to a plain `key = value` file.
//!
//! Blank lines and `#` comments are ignored. Lists are comma separated.
//! Unknown keys are rejected.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::rng::RngSeed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanVariant {
    Vanilla,
    Nonsaturating,
    LeastSquares,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceVariant {
    L1,
    L2,
}

/// Which adversarial objective drives the discriminator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialForm {
    /// Real vs teacher fakes plus `lambda_stu`-weighted student fakes.
    Collaborative,
    /// Real vs teacher fakes only.
    Plain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorUpdate {
    Combined,
    Sequential,
}

/// On/off switches for the student's loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossSet {
    pub per: bool,
    pub dcd: bool,
    pub gan: bool,
    /// Per-pixel feature matching baseline.
    pub fea_dis: bool,
}

impl LossSet {
    pub const ALL: LossSet = LossSet {
        per: true,
        dcd: true,
        gan: true,
        fea_dis: false,
    };

    pub fn is_empty(&self) -> bool {
        !(self.per || self.dcd || self.gan || self.fea_dis)
    }
}

impl fmt::Display for LossSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [
            (self.per, "per"),
            (self.dcd, "dcd"),
            (self.gan, "gan"),
            (self.fea_dis, "fea_dis"),
        ]
        .iter()
        .filter_map(|(on, n)| on.then_some(*n))
        .collect();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

impl FromStr for LossSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut set = LossSet {
            per: false,
            dcd: false,
            gan: false,
            fea_dis: false,
        };
        for name in s.split(',').map(str::trim).filter(|n| !n.is_empty()) {
            match name {
                "per" => set.per = true,
                "dcd" => set.dcd = true,
                "gan" | "col" => set.gan = true,
                "fea_dis" | "fitnet" => set.fea_dis = true,
                "none" => {}
                other => {
                    return Err(Error::Config(format!(
                        "unknown loss term `{other}` (expected per, dcd, gan, fea_dis)"
                    )))
                }
            }
        }
        Ok(set)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub lambda_dcd: f64,
    pub lambda_fea: f64,
    pub lambda_sty: f64,
    pub lambda_stu: f64,
    /// Weight of the per-pixel baseline when `losses.fea_dis` is on.
    pub lambda_fea_dis: f64,
    pub lr_initial: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub gan_variant: GanVariant,
    pub distance_variant: DistanceVariant,
    pub losses: LossSet,
    pub adversarial_form: AdversarialForm,
    /// Let distillation gradients reach the teacher generator.
    pub teacher_distill_grad: bool,
    pub generator_update: GeneratorUpdate,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            lambda_dcd: 1.0,
            lambda_fea: 10.0,
            lambda_sty: 1e4,
            lambda_stu: 1.0,
            lambda_fea_dis: 1.0,
            lr_initial: 2e-4,
            epochs: 4,
            batch_size: 4,
            gan_variant: GanVariant::Nonsaturating,
            distance_variant: DistanceVariant::L1,
            losses: LossSet::ALL,
            adversarial_form: AdversarialForm::Collaborative,
            teacher_distill_grad: false,
            generator_update: GeneratorUpdate::Combined,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_dcd", self.lambda_dcd),
            ("lambda_fea", self.lambda_fea),
            ("lambda_sty", self.lambda_sty),
            ("lambda_stu", self.lambda_stu),
            ("lambda_fea_dis", self.lambda_fea_dis),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if !(self.lr_initial.is_finite() && self.lr_initial > 0.0) {
            return Err(Error::Config(format!("lr_initial must be > 0, got {}", self.lr_initial)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.losses.is_empty() {
            return Err(Error::Config("loss_set must enable at least one term".into()));
        }
        Ok(())
    }
}

/// Student-to-teacher channel ratio as an exact fraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WidthFactor {
    pub num: u32,
    pub den: u32,
}

impl WidthFactor {
    pub const ONE: WidthFactor = WidthFactor { num: 1, den: 1 };
    pub const QUARTER: WidthFactor = WidthFactor { num: 1, den: 4 };

    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 || num > den {
            return Err(Error::Config(format!(
                "width factor {num}/{den} must lie in (0, 1]"
            )));
        }
        let g = gcd(num, den);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    /// `ceil(factor * width)`.
    pub fn apply(&self, width: usize) -> usize {
        (width * self.num as usize).div_ceil(self.den as usize)
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl fmt::Display for WidthFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for WidthFactor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse width factor `{s}`"));
        if let Some((n, d)) = s.split_once('/') {
            let n = n.trim().parse().map_err(|_| bad())?;
            let d = d.trim().parse().map_err(|_| bad())?;
            return WidthFactor::new(n, d);
        }
        let v: f64 = s.trim().parse().map_err(|_| bad())?;
        const SCALE: u32 = 1_000_000;
        WidthFactor::new((v * SCALE as f64).round() as u32, SCALE)
    }
}

/// Layer-index sets selecting intermediate activations of the generator,
/// discriminator and feature extractor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapSpec {
    pub generator_taps: Vec<usize>,
    pub discriminator_taps: Vec<usize>,
    pub extractor_taps: Vec<usize>,
}

impl TapSpec {
    pub fn validate(&self, generator_depth: usize, discriminator_depth: usize, extractor_depth: usize) -> Result<()> {
        validate_taps("generator_taps", &self.generator_taps, generator_depth, false)?;
        validate_taps("discriminator_taps", &self.discriminator_taps, discriminator_depth, false)?;
        validate_taps("extractor_taps", &self.extractor_taps, extractor_depth, false)
    }
}

/// Taps must be strictly increasing, in range, and (unless `allow_empty`)
/// non-empty.
pub fn validate_taps(name: &str, taps: &[usize], depth: usize, allow_empty: bool) -> Result<()> {
    if taps.is_empty() && !allow_empty {
        return Err(Error::Config(format!("{name} must not be empty")));
    }
    if let Some(w) = taps.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "{name} must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    if let Some(&bad) = taps.iter().find(|&&t| t >= depth) {
        return Err(Error::Config(format!(
            "{name}: layer {bad} out of range for a network with {depth} layers"
        )));
    }
    Ok(())
}

/// Default generator taps: four evenly spaced points of the residual trunk,
/// from the last downsampling block to the last residual block.
pub fn default_generator_taps(n_resblocks: usize) -> Vec<usize> {
    let mut taps: Vec<usize> = (0..4)
        .map(|j| 2 + (j * n_resblocks + 1) / 3)
        .collect();
    taps.dedup();
    taps
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    PairedEdges2blobs,
    UnpairedPaletteShift,
    Folder,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paired_edges2blobs" => Ok(Task::PairedEdges2blobs),
            "unpaired_palette_shift" => Ok(Task::UnpairedPaletteShift),
            "folder" => Ok(Task::Folder),
            other => Err(Error::Config(format!(
                "unknown task `{other}` (valid tasks: paired_edges2blobs, unpaired_palette_shift, folder)"
            ))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::PairedEdges2blobs => "paired_edges2blobs",
            Task::UnpairedPaletteShift => "unpaired_palette_shift",
            Task::Folder => "folder",
        })
    }
}

/// Where the perceptual extractor's weights come from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightsSource {
    FixedRandom(RngSeed),
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub hp: HyperParams,
    pub seed: RngSeed,

    pub base_width: usize,
    pub n_resblocks: usize,
    pub width_factor: WidthFactor,
    pub disc_widths: Vec<usize>,
    pub extractor_widths: Vec<usize>,
    pub extractor_weights: WeightsSource,
    pub embedder_widths: Vec<usize>,
    pub embedder_seed: RngSeed,

    /// `None` selects the architecture-dependent default.
    pub generator_taps: Option<Vec<usize>>,
    pub discriminator_taps: Option<Vec<usize>>,
    pub extractor_taps: Option<Vec<usize>>,

    pub task: Task,
    pub resolution: usize,
    pub n_train: usize,
    pub n_eval: usize,
    pub hue_offset: f64,
    pub data_a: Option<PathBuf>,
    pub data_b: Option<PathBuf>,
    pub paired: bool,

    /// Steps between desk-FID evaluations; 0 evaluates only at the end.
    pub eval_interval: u64,
    pub eval_samples: usize,
    /// Steps between checkpoints; 0 checkpoints only at the end.
    pub checkpoint_interval: u64,
    /// Pretrained teacher weights; when set the teacher generator is frozen.
    pub teacher_checkpoint: Option<PathBuf>,
    /// Stop after this many steps (0 = run every epoch).
    pub max_steps: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            hp: HyperParams::default(),
            seed: RngSeed(0),
            base_width: 16,
            n_resblocks: 6,
            width_factor: WidthFactor::QUARTER,
            disc_widths: vec![16, 32, 64, 128],
            extractor_widths: vec![16, 32, 64, 64],
            extractor_weights: WeightsSource::FixedRandom(RngSeed(0x5eed_f1)),
            embedder_widths: vec![16, 32, 64, 64],
            embedder_seed: RngSeed(0x5eed_e0),
            generator_taps: None,
            discriminator_taps: None,
            extractor_taps: None,
            task: Task::PairedEdges2blobs,
            resolution: 64,
            n_train: 64,
            n_eval: 64,
            hue_offset: 180.0,
            data_a: None,
            data_b: None,
            paired: true,
            eval_interval: 0,
            eval_samples: 64,
            checkpoint_interval: 0,
            teacher_checkpoint: None,
            max_steps: 0,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| parse_num(key, v))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got `{value}`"))),
    }
}

fn parse_opt_path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty() && v != "none").then(|| PathBuf::from(v))
}

fn join(list: &[usize]) -> String {
    list.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(|| "none".into(), |p| p.display().to_string())
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "lambda_dcd",
        "lambda_fea",
        "lambda_sty",
        "lambda_stu",
        "lambda_fea_dis",
        "lr_initial",
        "epochs",
        "batch_size",
        "gan_variant",
        "distance_variant",
        "loss_set",
        "adversarial_form",
        "teacher_distill_grad",
        "generator_update",
        "seed",
        "base_width",
        "n_resblocks",
        "width_factor",
        "disc_widths",
        "extractor_widths",
        "extractor_weights",
        "embedder_widths",
        "embedder_seed",
        "generator_taps",
        "discriminator_taps",
        "extractor_taps",
        "task",
        "resolution",
        "n_train",
        "n_eval",
        "hue_offset",
        "data_a",
        "data_b",
        "paired",
        "eval_interval",
        "eval_samples",
        "checkpoint_interval",
        "teacher_checkpoint",
        "max_steps",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "lambda_dcd" => self.hp.lambda_dcd = parse_num(key, value)?,
            "lambda_fea" => self.hp.lambda_fea = parse_num(key, value)?,
            "lambda_sty" => self.hp.lambda_sty = parse_num(key, value)?,
            "lambda_stu" => self.hp.lambda_stu = parse_num(key, value)?,
            "lambda_fea_dis" => self.hp.lambda_fea_dis = parse_num(key, value)?,
            "lr_initial" => self.hp.lr_initial = parse_num(key, value)?,
            "epochs" => self.hp.epochs = parse_num(key, value)?,
            "batch_size" => self.hp.batch_size = parse_num(key, value)?,
            "gan_variant" => {
                self.hp.gan_variant = match value {
                    "vanilla" => GanVariant::Vanilla,
                    "nonsaturating" => GanVariant::Nonsaturating,
                    "least_squares" => GanVariant::LeastSquares,
                    _ => return Err(Error::Config(format!("{key}: expected vanilla, nonsaturating or least_squares, got `{value}`"))),
                }
            }
            "distance_variant" => {
                self.hp.distance_variant = match value {
                    "l1" => DistanceVariant::L1,
                    "l2" => DistanceVariant::L2,
                    _ => return Err(Error::Config(format!("{key}: expected l1 or l2, got `{value}`"))),
                }
            }
            "loss_set" => self.hp.losses = value.parse()?,
            "adversarial_form" => {
                self.hp.adversarial_form = match value {
                    "collaborative" => AdversarialForm::Collaborative,
                    "plain" => AdversarialForm::Plain,
                    _ => return Err(Error::Config(format!("{key}: expected collaborative or plain, got `{value}`"))),
                }
            }
            "teacher_distill_grad" => self.hp.teacher_distill_grad = parse_bool(key, value)?,
            "generator_update" => {
                self.hp.generator_update = match value {
                    "combined" => GeneratorUpdate::Combined,
                    "sequential" => GeneratorUpdate::Sequential,
                    _ => return Err(Error::Config(format!("{key}: expected combined or sequential, got `{value}`"))),
                }
            }
            "seed" => self.seed = RngSeed(parse_num(key, value)?),
            "base_width" => self.base_width = parse_num(key, value)?,
            "n_resblocks" => self.n_resblocks = parse_num(key, value)?,
            "width_factor" => self.width_factor = value.parse()?,
            "disc_widths" => self.disc_widths = parse_list(key, value)?,
            "extractor_widths" => self.extractor_widths = parse_list(key, value)?,
            "extractor_weights" => {
                self.extractor_weights = match value.strip_prefix("random:") {
                    Some(seed) => WeightsSource::FixedRandom(RngSeed(parse_num(key, seed)?)),
                    None => WeightsSource::File(PathBuf::from(value)),
                }
            }
            "embedder_widths" => self.embedder_widths = parse_list(key, value)?,
            "embedder_seed" => self.embedder_seed = RngSeed(parse_num(key, value)?),
            "generator_taps" => self.generator_taps = parse_taps(key, value)?,
            "discriminator_taps" => self.discriminator_taps = parse_taps(key, value)?,
            "extractor_taps" => self.extractor_taps = parse_taps(key, value)?,
            "task" => self.task = value.parse()?,
            "resolution" => self.resolution = parse_num(key, value)?,
            "n_train" => self.n_train = parse_num(key, value)?,
            "n_eval" => self.n_eval = parse_num(key, value)?,
            "hue_offset" => self.hue_offset = parse_num(key, value)?,
            "data_a" => self.data_a = parse_opt_path(value),
            "data_b" => self.data_b = parse_opt_path(value),
            "paired" => self.paired = parse_bool(key, value)?,
            "eval_interval" => self.eval_interval = parse_num(key, value)?,
            "eval_samples" => self.eval_samples = parse_num(key, value)?,
            "checkpoint_interval" => self.checkpoint_interval = parse_num(key, value)?,
            "teacher_checkpoint" => self.teacher_checkpoint = parse_opt_path(value),
            "max_steps" => self.max_steps = parse_num(key, value)?,
            other => {
                return Err(Error::Config(format!("unknown configuration key `{other}`")));
            }
        }
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{raw}`", i + 1))
            })?;
            cfg.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        Self::parse(&text)
    }

    /// Every key with its current value; parses back to an equal config.
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        let hp = &self.hp;
        let gan = match hp.gan_variant {
            GanVariant::Vanilla => "vanilla",
            GanVariant::Nonsaturating => "nonsaturating",
            GanVariant::LeastSquares => "least_squares",
        };
        let dist = match hp.distance_variant {
            DistanceVariant::L1 => "l1",
            DistanceVariant::L2 => "l2",
        };
        let form = match hp.adversarial_form {
            AdversarialForm::Collaborative => "collaborative",
            AdversarialForm::Plain => "plain",
        };
        let update = match hp.generator_update {
            GeneratorUpdate::Combined => "combined",
            GeneratorUpdate::Sequential => "sequential",
        };
        let taps = |t: &Option<Vec<usize>>| t.as_ref().map_or_else(|| "default".into(), |t| join(t));
        let extractor = match &self.extractor_weights {
            WeightsSource::FixedRandom(s) => format!("random:{}", s.0),
            WeightsSource::File(p) => p.display().to_string(),
        };
        let entries: Vec<(&str, String)> = vec![
            ("lambda_dcd", format!("{:?}", hp.lambda_dcd)),
            ("lambda_fea", format!("{:?}", hp.lambda_fea)),
            ("lambda_sty", format!("{:?}", hp.lambda_sty)),
            ("lambda_stu", format!("{:?}", hp.lambda_stu)),
            ("lambda_fea_dis", format!("{:?}", hp.lambda_fea_dis)),
            ("lr_initial", format!("{:?}", hp.lr_initial)),
            ("epochs", hp.epochs.to_string()),
            ("batch_size", hp.batch_size.to_string()),
            ("gan_variant", gan.into()),
            ("distance_variant", dist.into()),
            ("loss_set", hp.losses.to_string()),
            ("adversarial_form", form.into()),
            ("teacher_distill_grad", hp.teacher_distill_grad.to_string()),
            ("generator_update", update.into()),
            ("seed", self.seed.0.to_string()),
            ("base_width", self.base_width.to_string()),
            ("n_resblocks", self.n_resblocks.to_string()),
            ("width_factor", self.width_factor.to_string()),
            ("disc_widths", join(&self.disc_widths)),
            ("extractor_widths", join(&self.extractor_widths)),
            ("extractor_weights", extractor),
            ("embedder_widths", join(&self.embedder_widths)),
            ("embedder_seed", self.embedder_seed.0.to_string()),
            ("generator_taps", taps(&self.generator_taps)),
            ("discriminator_taps", taps(&self.discriminator_taps)),
            ("extractor_taps", taps(&self.extractor_taps)),
            ("task", self.task.to_string()),
            ("resolution", self.resolution.to_string()),
            ("n_train", self.n_train.to_string()),
            ("n_eval", self.n_eval.to_string()),
            ("hue_offset", format!("{:?}", self.hue_offset)),
            ("data_a", opt_path(&self.data_a)),
            ("data_b", opt_path(&self.data_b)),
            ("paired", self.paired.to_string()),
            ("eval_interval", self.eval_interval.to_string()),
            ("eval_samples", self.eval_samples.to_string()),
            ("checkpoint_interval", self.checkpoint_interval.to_string()),
            ("teacher_checkpoint", opt_path(&self.teacher_checkpoint)),
            ("max_steps", self.max_steps.to_string()),
        ];
        debug_assert_eq!(entries.len(), Self::KEYS.len());
        for (k, v) in entries {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }

    pub fn tap_spec(&self) -> TapSpec {
        TapSpec {
            generator_taps: self
                .generator_taps
                .clone()
                .unwrap_or_else(|| default_generator_taps(self.n_resblocks)),
            discriminator_taps: self
                .discriminator_taps
                .clone()
                .unwrap_or_else(|| (0..self.disc_widths.len()).collect()),
            extractor_taps: self
                .extractor_taps
                .clone()
                .unwrap_or_else(|| (0..self.extractor_widths.len()).collect()),
        }
    }

    /// Layers in the generator: stem, two downsamplers, residual blocks,
    /// two upsamplers, output head.
    pub fn generator_depth(&self) -> usize {
        self.n_resblocks + 6
    }

    /// Full validation, run before any compute or filesystem side effect.
    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if self.base_width == 0 {
            return Err(Error::Config("base_width must be >= 1".into()));
        }
        for (name, widths) in [
            ("disc_widths", &self.disc_widths),
            ("extractor_widths", &self.extractor_widths),
            ("embedder_widths", &self.embedder_widths),
        ] {
            if widths.is_empty() || widths.contains(&0) {
                return Err(Error::Config(format!("{name} must be a non-empty list of positive widths")));
            }
        }
        self.tap_spec().validate(
            self.generator_depth(),
            self.disc_widths.len(),
            self.extractor_widths.len(),
        )?;
        if self.resolution == 0 || self.resolution % 4 != 0 {
            return Err(Error::Config(format!(
                "resolution must be a positive multiple of 4, got {}",
                self.resolution
            )));
        }
        // every stride-2 discriminator block must leave at least one pixel
        if self.resolution >> self.disc_widths.len() == 0 {
            return Err(Error::Config(format!(
                "resolution {} is too small for {} discriminator blocks",
                self.resolution,
                self.disc_widths.len()
            )));
        }
        if self.resolution >> self.embedder_widths.len().max(self.extractor_widths.len()) == 0 {
            return Err(Error::Config(format!(
                "resolution {} is too small for the feature extractors",
                self.resolution
            )));
        }
        if self.n_train == 0 || self.n_eval == 0 {
            return Err(Error::Config("n_train and n_eval must be >= 1".into()));
        }
        if self.hp.batch_size > self.n_train {
            return Err(Error::Config(format!(
                "batch_size {} exceeds n_train {}",
                self.hp.batch_size, self.n_train
            )));
        }
        if self.eval_samples < 2 || self.eval_samples > self.n_eval {
            return Err(Error::Config(format!(
                "eval_samples must lie in [2, n_eval = {}], got {}",
                self.n_eval, self.eval_samples
            )));
        }
        if self.task == Task::Folder && (self.data_a.is_none() || self.data_b.is_none()) {
            return Err(Error::Config("task folder needs data_a and data_b".into()));
        }
        if !self.hue_offset.is_finite() {
            return Err(Error::Config("hue_offset must be finite".into()));
        }
        Ok(())
    }
}

fn parse_taps(key: &str, value: &str) -> Result<Option<Vec<usize>>> {
    if value == "default" {
        Ok(None)
    } else {
        parse_list(key, value).map(Some)
    }
}
