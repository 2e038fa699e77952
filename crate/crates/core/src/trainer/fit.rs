use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{build_embedder, build_models, load_checkpoint, lr_at_epoch, save_checkpoint, train_step, Models, TrainState};
use crate::autograd::Tape;
use crate::config::RunConfig;
use crate::data::{batch_iterator, build_datasets, Dataset, DatasetSpec};
use crate::error::{Error, IoContext, Result};
use crate::eval::{desk_fid, dump_feature_images, dump_samples, FidReport};
use crate::losses::LossReport;
use crate::nets::{Binding, FeatureExtractor};
use crate::rng::RngSeed;

pub const METRICS_LOG: &str = "metrics.jsonl";
pub const FID_LOG: &str = "fid.jsonl";
const CHECKPOINT_DIR: &str = "checkpoint";
const SAMPLES_DIR: &str = "samples";

/// One line of the per-step metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsLine {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub gan_d: f64,
    pub gan_g_teacher: f64,
    pub gan_g_student: f64,
    pub fea: f64,
    pub sty: f64,
    pub per: f64,
    pub dcd: f64,
    pub total_student: f64,
    /// Only logged when the per-pixel baseline term is enabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fea_dis: Option<f64>,
}

impl MetricsLine {
    fn new(step: u64, epoch: usize, lr: f64, r: &LossReport, with_fea_dis: bool) -> Self {
        Self {
            step,
            epoch,
            lr,
            gan_d: r.gan_d,
            gan_g_teacher: r.gan_g_teacher,
            gan_g_student: r.gan_g_student,
            fea: r.fea,
            sty: r.sty,
            per: r.per,
            dcd: r.dcd,
            total_student: r.total,
            fea_dis: with_fea_dis.then_some(r.fea_dis),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidLine {
    pub step: u64,
    pub desk_fid: f64,
    pub n_samples: usize,
    pub embedder_digest: String,
    /// Digest of the student generator that was scored.
    pub checkpoint_digest: String,
}

#[derive(Clone, Debug)]
pub struct FitSummary {
    pub steps: u64,
    pub final_fid: FidLine,
    pub models: Models,
    pub run_dir: PathBuf,
}

/// Parses a metrics log; errors carry the 1-based line number.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsLine>> {
    let file = File::open(path).at(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str(&line)
            .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(parsed);
    }
    Ok(out)
}

/// Keeps only log lines with `step <= max_step`, so a resumed run does not
/// duplicate steps written after its checkpoint.
fn truncate_log(path: &Path, max_step: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    #[derive(Deserialize)]
    struct StepOnly {
        step: u64,
    }
    let text = fs::read_to_string(path).at(path)?;
    let kept: String = text
        .lines()
        .filter(|l| serde_json::from_str::<StepOnly>(l).is_ok_and(|s| s.step <= max_step))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(path, kept).at(path)
}

fn append_line<T: Serialize>(w: &mut impl Write, path: &Path, value: &T) -> Result<()> {
    let line = serde_json::to_string(value).map_err(|e| Error::Numerical(e.to_string()))?;
    writeln!(w, "{line}").at(path)?;
    w.flush().at(path)
}

fn open_append(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(OpenOptions::new().create(true).append(true).open(path).at(path)?))
}

fn evaluate(models: &Models, eval: &Dataset, embedder: &FeatureExtractor, n: usize, step: u64) -> Result<FidLine> {
    let idx: Vec<usize> = (0..n).collect();
    let FidReport { desk_fid, n_samples, embedder_digest } =
        desk_fid(&models.student, &eval.batch_a(&idx)?, &eval.batch_b(&idx)?, embedder, n)?;
    Ok(FidLine {
        step,
        desk_fid,
        n_samples,
        embedder_digest,
        checkpoint_digest: models.student.params.digest()?,
    })
}

fn dump(models: &Models, eval: &Dataset, dir: &Path, step: u64) -> Result<()> {
    let idx: Vec<usize> = (0..eval.len().min(4)).collect();
    dump_samples(&models.student, &eval.batch_a(&idx)?, dir, step)?;
    let mut tape = Tape::new();
    let bound = models.student.bind(&mut tape, Binding::Constant);
    let x = tape.constant(eval.batch_a(&[0])?);
    let (_, feats) = models.student.forward_with_taps(&mut tape, &bound, x, &models.taps.generator_taps)?;
    let feats: Vec<_> = feats.iter().map(|&f| tape.value(f).clone()).collect();
    let hw = (models.resolution, models.resolution);
    dump_feature_images(&models.student_bank, &feats, hw, &dir.join("features"), step)?;
    Ok(())
}

/// Trains `cfg` in `run_dir`: per-step metrics to `metrics.jsonl`, desk-FID
/// to `fid.jsonl`, checkpoints under `checkpoint/`, final sample dumps
/// under `samples/`. With `resume`, continues from the checkpoint in
/// `run_dir`. `progress` sees every logged step.
pub fn fit(cfg: &RunConfig, run_dir: &Path, resume: bool, progress: &mut dyn FnMut(&MetricsLine)) -> Result<FitSummary> {
    cfg.validate()?;
    let splits = build_datasets(&DatasetSpec::from_config(cfg))?;
    let (train, eval) = (&splits.train, &splits.eval);
    let hp = &cfg.hp;
    let per_epoch = batch_iterator(train.len(), hp.batch_size, cfg.seed, 0)?.len();
    if cfg.eval_samples > eval.len() {
        return Err(Error::Config(format!(
            "eval_samples {} exceeds the {} eval items",
            cfg.eval_samples,
            eval.len()
        )));
    }
    let scheduled = (hp.epochs * per_epoch) as u64;
    let total = if cfg.max_steps > 0 { cfg.max_steps.min(scheduled) } else { scheduled };

    let ckpt = run_dir.join(CHECKPOINT_DIR);
    let (metrics_path, fid_path) = (run_dir.join(METRICS_LOG), run_dir.join(FID_LOG));
    let (mut models, mut state) = if resume {
        let restored = load_checkpoint(&ckpt, cfg)?;
        truncate_log(&metrics_path, restored.1.step)?;
        truncate_log(&fid_path, restored.1.step)?;
        restored
    } else {
        let models = build_models(cfg)?;
        let state = TrainState::new(&models)?;
        fs::create_dir_all(run_dir).at(run_dir)?;
        for p in [&metrics_path, &fid_path] {
            File::create(p).at(p)?;
        }
        (models, state)
    };
    let config_echo = run_dir.join("config.txt");
    fs::write(&config_echo, cfg.to_kv_string()).at(&config_echo)?;
    let embedder = build_embedder(cfg)?;
    let mut metrics = open_append(&metrics_path)?;
    let mut fids = open_append(&fid_path)?;
    let b_seed = cfg.seed.offset(1 << 32);

    'epochs: while state.step < total {
        let epoch = state.epoch;
        let lr = lr_at_epoch(epoch, hp)?;
        let a_batches = batch_iterator(train.len(), hp.batch_size, cfg.seed, epoch)?;
        let b_batches = if train.paired {
            a_batches.clone()
        } else {
            batch_iterator(train.b.len(), hp.batch_size, RngSeed(b_seed.0), epoch)?
        };
        for (a_idx, b_idx) in a_batches.iter().zip(&b_batches).skip(state.batch_in_epoch) {
            let x = train.batch_a(a_idx)?;
            let y = train.batch_b(b_idx)?;
            let report = train_step(&mut models, &mut state, &x, &y, hp, lr)?;
            state.batch_in_epoch += 1;
            let line = MetricsLine::new(state.step, epoch, lr, &report, hp.losses.fea_dis);
            append_line(&mut metrics, &metrics_path, &line)?;
            progress(&line);
            if cfg.eval_interval > 0 && state.step % cfg.eval_interval == 0 && state.step < total {
                let fid = evaluate(&models, eval, &embedder, cfg.eval_samples, state.step)?;
                append_line(&mut fids, &fid_path, &fid)?;
            }
            if cfg.checkpoint_interval > 0 && state.step % cfg.checkpoint_interval == 0 && state.step < total {
                state.check_frozen(&models)?;
                save_checkpoint(&ckpt, &models, &state, cfg)?;
            }
            if state.step >= total {
                break 'epochs;
            }
        }
        state.epoch += 1;
        state.batch_in_epoch = 0;
    }
    // roll over a completed epoch so a later resume starts cleanly
    if state.batch_in_epoch == per_epoch {
        state.epoch += 1;
        state.batch_in_epoch = 0;
    }

    state.check_frozen(&models)?;
    let final_fid = evaluate(&models, eval, &embedder, cfg.eval_samples, state.step)?;
    append_line(&mut fids, &fid_path, &final_fid)?;
    save_checkpoint(&ckpt, &models, &state, cfg)?;
    dump(&models, eval, &run_dir.join(SAMPLES_DIR), state.step)?;
    Ok(FitSummary {
        steps: state.step,
        final_fid,
        models,
        run_dir: run_dir.to_path_buf(),
    })
}
