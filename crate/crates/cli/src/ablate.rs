//! Loss-combination grid and λ sweeps, run sequentially with per-row seeds.

use std::fs;
use std::path::Path;

use serde::Serialize;

use dcd_core::config::{LossSet, RunConfig};
use dcd_core::trainer::fit;
use dcd_core::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    /// `combos`, `lambda_dcd` or `lambda_stu`.
    pub group: &'static str,
    pub losses: LossSet,
    /// Extra `key=value` overrides for this row.
    pub overrides: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationGrid {
    pub rows: Vec<AblationRow>,
}

pub const LAMBDA_DCD_SWEEP: [f64; 4] = [0.1, 1.0, 5.0, 10.0];
pub const LAMBDA_STU_SWEEP: [f64; 3] = [0.1, 1.0, 10.0];

impl AblationGrid {
    /// The seven non-empty subsets of {per, dcd, gan}, then the λ_dcd and
    /// λ_stu sweeps on the full objective.
    pub fn standard() -> Self {
        let set = |per, dcd, gan| LossSet { per, dcd, gan, fea_dis: false };
        let combos = [
            set(true, false, false),
            set(false, true, false),
            set(false, false, true),
            set(true, true, false),
            set(true, false, true),
            set(false, true, true),
            set(true, true, true),
        ];
        let mut rows: Vec<AblationRow> = combos
            .into_iter()
            .map(|losses| AblationRow { group: "combos", losses, overrides: vec![] })
            .collect();
        for v in LAMBDA_DCD_SWEEP {
            rows.push(AblationRow { group: "lambda_dcd", losses: LossSet::ALL, overrides: vec![format!("lambda_dcd={v}")] });
        }
        for v in LAMBDA_STU_SWEEP {
            rows.push(AblationRow { group: "lambda_stu", losses: LossSet::ALL, overrides: vec![format!("lambda_stu={v}")] });
        }
        Self { rows }
    }

    /// Keeps the rows of one group, or all of them.
    pub fn select(self, which: &str) -> Result<Self> {
        match which {
            "all" => Ok(self),
            "combos" | "lambda_dcd" | "lambda_stu" => Ok(Self {
                rows: self.rows.into_iter().filter(|r| r.group == which).collect(),
            }),
            other => Err(Error::Config(format!(
                "unknown row group `{other}` (expected all, combos, lambda_dcd, lambda_stu)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RowResult {
    pub combo: String,
    pub lambda_overrides: String,
    pub seed: u64,
    pub steps: u64,
    pub desk_fid: Option<f64>,
    pub status: String,
}

impl RowResult {
    pub fn table_line(&self) -> String {
        let fid = self.desk_fid.map_or_else(|| "-".to_string(), |f| format!("{f:.4}"));
        format!(
            "{:<14} {:<18} {:>6} {:>7} {:>12}  {}",
            self.combo,
            if self.lambda_overrides.is_empty() { "-" } else { &self.lambda_overrides },
            self.seed,
            self.steps,
            fid,
            self.status
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<RowResult>,
}

impl AblationReport {
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<14} {:<18} {:>6} {:>7} {:>12}  status\n",
            "combo", "lambda", "seed", "steps", "desk_fid"
        );
        for r in &self.rows {
            out.push_str(&r.table_line());
            out.push('\n');
        }
        out.push_str("desk-FID values come from a small fixed embedder and are only comparable within this table.\n");
        out
    }
}

fn combo_name(l: &LossSet) -> String {
    let names: Vec<&str> = [(l.per, "per"), (l.dcd, "dcd"), (l.gan, "gan"), (l.fea_dis, "fea_dis")]
        .into_iter()
        .filter_map(|(on, n)| on.then_some(n))
        .collect();
    names.join("+")
}

/// Runs every row of `grid` on top of `base`, writing each run under
/// `out/rowNN` plus `results.csv` and `table.txt`. A failing row is
/// recorded and the sweep continues.
pub fn run_grid(grid: &AblationGrid, base: &RunConfig, out: &Path, on_row: &mut dyn FnMut(&RowResult)) -> Result<AblationReport> {
    if grid.rows.is_empty() {
        return Err(Error::Config("ablation grid is empty".into()));
    }
    // every row's configuration is checked before anything runs
    let mut configs = Vec::with_capacity(grid.rows.len());
    for (i, row) in grid.rows.iter().enumerate() {
        let mut cfg = base.clone();
        cfg.hp.losses = row.losses;
        cfg.apply_overrides(&row.overrides)?;
        cfg.seed = base.seed.offset(i as u64);
        cfg.validate()?;
        configs.push(cfg);
    }
    fs::create_dir_all(out).map_err(|source| Error::Io { path: out.to_path_buf(), source })?;
    let mut rows = Vec::with_capacity(configs.len());
    for (i, (row, cfg)) in grid.rows.iter().zip(&configs).enumerate() {
        let (steps, desk_fid, status) = match fit(cfg, &out.join(format!("row{i:02}")), false, &mut |_| {}) {
            Ok(s) => (s.steps, Some(s.final_fid.desk_fid), "ok".to_string()),
            Err(Error::Divergence { term, step }) => (step, None, format!("diverged ({term} at step {step})")),
            Err(e) => (0, None, format!("failed: {e}")),
        };
        let result = RowResult {
            combo: combo_name(&row.losses),
            lambda_overrides: row.overrides.join(";"),
            seed: cfg.seed.0,
            steps,
            desk_fid,
            status,
        };
        on_row(&result);
        rows.push(result);
    }
    let report = AblationReport { rows };
    let csv_path = out.join("results.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| csv_err(&csv_path, e))?;
    w.write_record(["combo", "lambda_overrides", "seed", "steps", "desk_fid", "status"])
        .map_err(|e| csv_err(&csv_path, e))?;
    for r in &report.rows {
        let fid = r.desk_fid.map_or_else(String::new, |f| format!("{f:?}"));
        w.write_record([&r.combo, &r.lambda_overrides, &r.seed.to_string(), &r.steps.to_string(), &fid, &r.status])
            .map_err(|e| csv_err(&csv_path, e))?;
    }
    w.flush().map_err(|source| Error::Io { path: csv_path.clone(), source })?;
    let table = out.join("table.txt");
    fs::write(&table, report.table()).map_err(|source| Error::Io { path: table, source })?;
    Ok(report)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}
