//! `dcd` subcommands: gen-data, train, ablate, eval, count, plot.

pub mod ablate;
pub mod plot;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dcd_core::config::{LossSet, RunConfig, Task};
use dcd_core::data::{build_datasets, write_dataset, DatasetSpec};
use dcd_core::eval::{count_complexity, desk_fid, ComplexityReport};
use dcd_core::nets::GeneratorSpec;
use dcd_core::trainer::{build_embedder, checkpoint_config, fit, load_checkpoint};
use dcd_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_OTHER: i32 = 1;

#[derive(Parser, Debug)]
#[command(name = "dcd", version, about = "Discriminator-cooperated distillation for image-to-image GANs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Key-value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set lambda_dcd=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Student loss terms, e.g. `per,gan`.
    #[arg(long)]
    pub loss_set: Option<String>,
}

impl ConfigArgs {
    /// Loads the file (or defaults), then applies overrides and validates.
    pub fn resolve(&self) -> dcd_core::Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        self.apply(base)
    }

    fn apply(&self, mut cfg: RunConfig) -> dcd_core::Result<RunConfig> {
        cfg.apply_overrides(&self.overrides)?;
        if let Some(ls) = &self.loss_set {
            cfg.hp.losses = ls.parse::<LossSet>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic dataset to PNG folders plus a manifest.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        task: Option<String>,
        /// Training items.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        n_eval: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train teacher, student and discriminator together.
    Train {
        /// Run directory for logs, checkpoints and samples.
        #[arg(long, required_unless_present = "resume")]
        out: Option<PathBuf>,
        /// Continue the run in this directory from its last checkpoint.
        #[arg(long, conflicts_with = "out")]
        resume: Option<PathBuf>,
        /// Print a progress line every this many steps (0 = quiet).
        #[arg(long, default_value_t = 50)]
        log_every: u64,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run the loss-combination grid and the λ sweeps.
    Ablate {
        #[arg(long)]
        out: PathBuf,
        /// Which rows to run: all, combos, lambda_dcd, lambda_stu.
        #[arg(long, default_value = "all")]
        rows: String,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Desk-FID and complexity of a checkpoint's student.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides of the checkpoint's configuration (data keys only).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Parameter and MAC counts of teacher and student generators.
    Count {
        /// Print the full per-layer reports as JSON.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// SVG curves of a metrics log (and its desk-FID log, if present).
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Validation(_) | Error::Shape(_) => EXIT_CONFIG,
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::Io { .. } | Error::Image { .. } | Error::Corruption(_) => EXIT_IO,
        Error::NonFiniteParameter(_) | Error::Numerical(_) => EXIT_OTHER,
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn say(out: &mut dyn Write, text: &str) -> dcd_core::Result<()> {
    writeln!(out, "{text}").map_err(io_err(Path::new("<stdout>")))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("plain data serializes")
}

pub fn execute(command: Command, out: &mut dyn Write) -> dcd_core::Result<()> {
    match command {
        Command::GenData { out: dir, task, n, n_eval, seed, cfg } => {
            let mut overrides = cfg.overrides.clone();
            if let Some(t) = task {
                t.parse::<Task>()?;
                overrides.push(format!("task={t}"));
            }
            if let Some(n) = n {
                overrides.push(format!("n_train={n}"));
            }
            if let Some(n) = n_eval {
                overrides.push(format!("n_eval={n}"));
            }
            if let Some(s) = seed {
                overrides.push(format!("seed={s}"));
            }
            let cfg = ConfigArgs { overrides, ..cfg }.resolve()?;
            let spec = DatasetSpec::from_config(&cfg);
            let splits = build_datasets(&spec)?;
            let manifest = write_dataset(&dir, &spec, &splits)?;
            say(out, &format!(
                "wrote {} train + {} eval items to {} (digest {})",
                splits.train.len(),
                splits.eval.len(),
                dir.display(),
                manifest.digest
            ))
        }
        Command::Train { out: dir, resume, log_every, cfg } => {
            let (run_dir, cfg, resuming) = match (dir, resume) {
                (_, Some(r)) => {
                    let base = checkpoint_config(&r.join("checkpoint"))?;
                    let merged = match &cfg.config {
                        Some(_) => cfg.resolve()?,
                        None => cfg.apply(base)?,
                    };
                    (r, merged, true)
                }
                (Some(d), None) => (d, cfg.resolve()?, false),
                (None, None) => return Err(Error::Config("train needs --out or --resume".into())),
            };
            let hp = &cfg.hp;
            say(out, &format!(
                "lambda_dcd={} lambda_fea={} lambda_sty={} lambda_stu={} lr={} loss_set={}",
                hp.lambda_dcd, hp.lambda_fea, hp.lambda_sty, hp.lambda_stu, hp.lr_initial, hp.losses
            ))?;
            let mut progress = |l: &dcd_core::trainer::MetricsLine| {
                if log_every > 0 && l.step % log_every == 0 {
                    let _ = writeln!(
                        out,
                        "step {} epoch {} gan_d {:.4} g_stu {:.4} per {:.4} dcd {:.4} total {:.4}",
                        l.step, l.epoch, l.gan_d, l.gan_g_student, l.per, l.dcd, l.total_student
                    );
                }
            };
            let summary = fit(&cfg, &run_dir, resuming, &mut progress)?;
            say(out, &format!(
                "finished {} steps; desk-FID {:.4} (embedder {})",
                summary.steps, summary.final_fid.desk_fid, summary.final_fid.embedder_digest
            ))
        }
        Command::Ablate { out: dir, rows, cfg } => {
            let cfg = cfg.resolve()?;
            let grid = ablate::AblationGrid::standard().select(&rows)?;
            let report = ablate::run_grid(&grid, &cfg, &dir, &mut |row| {
                let _ = writeln!(out, "{}", row.table_line());
            })?;
            say(out, &report.table())
        }
        Command::Eval { checkpoint, out: dest, overrides } => {
            let report = evaluate_checkpoint(&checkpoint, &overrides)?;
            let text = to_json(&report);
            match dest {
                Some(p) => std::fs::write(&p, text + "\n").map_err(io_err(&p)),
                None => say(out, &text),
            }
        }
        Command::Count { json, cfg } => {
            let cfg = cfg.resolve()?;
            let c = count_models(&cfg)?;
            if json {
                say(out, &to_json(&c))
            } else {
                say(out, &c.summary())
            }
        }
        Command::Plot { metrics, out: dir } => {
            let written = plot::plot_metrics(&metrics, &dir)?;
            say(out, &format!("wrote {} plots to {}", written.len(), dir.display()))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub desk_fid: f64,
    pub n_samples: usize,
    pub embedder_digest: String,
    pub checkpoint_digest: String,
    pub complexity: ComplexityReport,
}

/// Keys that may differ from a checkpoint's configuration at evaluation.
const EVAL_KEYS: &[&str] = &["eval_samples", "n_eval", "data_a", "data_b", "task", "seed", "hue_offset", "paired"];

pub fn evaluate_checkpoint(checkpoint: &Path, overrides: &[String]) -> dcd_core::Result<EvalReport> {
    let trained = checkpoint_config(checkpoint)?;
    let mut cfg = trained.clone();
    for o in overrides {
        let key = o.split_once('=').map_or(o.as_str(), |(k, _)| k.trim());
        if key == "resolution" {
            cfg.apply_overrides(&[o])?;
            if cfg.resolution != trained.resolution {
                return Err(Error::Config(format!(
                    "checkpoint was trained at resolution {}, evaluation requested {}",
                    trained.resolution, cfg.resolution
                )));
            }
        } else if EVAL_KEYS.contains(&key) {
            cfg.apply_overrides(&[o])?;
        } else {
            return Err(Error::Config(format!("`{key}` cannot be overridden at evaluation")));
        }
    }
    cfg.validate()?;
    let (models, _) = load_checkpoint(checkpoint, &trained)?;
    let eval = build_datasets(&DatasetSpec::from_config(&cfg))?.eval;
    let idx: Vec<usize> = (0..cfg.eval_samples).collect();
    let embedder = build_embedder(&cfg)?;
    let fid = desk_fid(&models.student, &eval.batch_a(&idx)?, &eval.batch_b(&idx)?, &embedder, cfg.eval_samples)?;
    Ok(EvalReport {
        desk_fid: fid.desk_fid,
        n_samples: fid.n_samples,
        embedder_digest: fid.embedder_digest,
        checkpoint_digest: models.student.params.digest()?,
        complexity: count_complexity(&models.student.net, 3, cfg.resolution)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CountReport {
    pub teacher: ComplexityReport,
    pub student: ComplexityReport,
    pub param_ratio: f64,
    pub mac_ratio: f64,
}

impl CountReport {
    pub fn summary(&self) -> String {
        format!(
            "teacher: {} params, {} MACs at {res}x{res}\n\
             student: {} params, {} MACs at {res}x{res}\n\
             reduction: params {:.2}x, MACs {:.2}x",
            self.teacher.total_params,
            self.teacher.total_macs,
            self.student.total_params,
            self.student.total_macs,
            self.param_ratio,
            self.mac_ratio,
            res = self.teacher.resolution,
        )
    }
}

pub fn count_models(cfg: &RunConfig) -> dcd_core::Result<CountReport> {
    let t = GeneratorSpec::teacher(cfg.base_width, cfg.n_resblocks);
    let s = t.with_width_factor(cfg.width_factor);
    let teacher = count_complexity(&t.network(), 3, cfg.resolution)?;
    let student = count_complexity(&s.network(), 3, cfg.resolution)?;
    Ok(CountReport {
        param_ratio: teacher.total_params as f64 / student.total_params as f64,
        mac_ratio: teacher.total_macs as f64 / student.total_macs as f64,
        teacher,
        student,
    })
}
