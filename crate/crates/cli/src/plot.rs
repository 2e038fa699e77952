//! SVG curves for metrics and desk-FID logs.

use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use dcd_core::trainer::{read_metrics, FidLine, MetricsLine, FID_LOG};
use dcd_core::{Error, Result};

type Series = (&'static str, fn(&MetricsLine) -> f64);

const SERIES: [Series; 8] = [
    ("gan_d", |l| l.gan_d),
    ("gan_g_teacher", |l| l.gan_g_teacher),
    ("gan_g_student", |l| l.gan_g_student),
    ("fea", |l| l.fea),
    ("sty", |l| l.sty),
    ("per", |l| l.per),
    ("dcd", |l| l.dcd),
    ("total_student", |l| l.total_student),
];

fn draw(path: &Path, title: &str, points: &[(f64, f64)]) -> Result<()> {
    let fail = |e: String| Error::Io { path: path.to_path_buf(), source: std::io::Error::other(e) };
    let (x0, x1) = points.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (y0, y1) = points.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let pad = ((y1 - y0) * 0.05).max(1e-9);
    let x1 = if x1 > x0 { x1 } else { x0 + 1.0 };
    let root = SVGBackend::new(path, (640, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| fail(e.to_string()))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, (y0 - pad)..(y1 + pad))
        .map_err(|e| fail(e.to_string()))?;
    chart.configure_mesh().x_desc("step").draw().map_err(|e| fail(e.to_string()))?;
    chart
        .draw_series(LineSeries::new(points.iter().copied(), &BLUE))
        .map_err(|e| fail(e.to_string()))?;
    root.present().map_err(|e| fail(e.to_string()))?;
    Ok(())
}

/// One `loss_<term>.svg` per logged term, plus `desk_fid.svg` when a
/// desk-FID log sits next to `metrics`.
pub fn plot_metrics(metrics: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let lines = read_metrics(metrics)?;
    if lines.is_empty() {
        return Err(Error::Config(format!("{} holds no metrics", metrics.display())));
    }
    fs::create_dir_all(out).map_err(|source| Error::Io { path: out.to_path_buf(), source })?;
    let mut written = Vec::new();
    for (name, get) in SERIES {
        let pts: Vec<(f64, f64)> = lines.iter().map(|l| (l.step as f64, get(l))).collect();
        let path = out.join(format!("loss_{name}.svg"));
        draw(&path, name, &pts)?;
        written.push(path);
    }
    let fid_path = metrics.with_file_name(FID_LOG);
    if fid_path.exists() {
        let text = fs::read_to_string(&fid_path).map_err(|source| Error::Io { path: fid_path.clone(), source })?;
        let mut pts = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: FidLine = serde_json::from_str(line)
                .map_err(|e| Error::Config(format!("{}:{}: {e}", fid_path.display(), i + 1)))?;
            pts.push((f.step as f64, f.desk_fid));
        }
        if !pts.is_empty() {
            let path = out.join("desk_fid.svg");
            draw(&path, "desk-FID (embedder-relative)", &pts)?;
            written.push(path);
        }
    }
    Ok(written)
}
