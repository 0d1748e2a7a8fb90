//! Static SVG plots from the CSV artifacts of a run, sweep, fit or benchmark.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use plotters::prelude::*;

use crate::output::Table;

/// One named polyline.
#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Copy, Debug)]
pub struct Axes<'a> {
    pub title: &'a str,
    pub x: &'a str,
    pub y: &'a str,
    pub log_x: bool,
    pub log_y: bool,
}

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(255, 127, 14),
    RGBColor(148, 103, 189),
    RGBColor(23, 190, 207),
];

fn tf(v: f64, log: bool) -> Option<f64> {
    if !log {
        return v.is_finite().then_some(v);
    }
    (v > 0.0 && v.is_finite()).then(|| v.log10())
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if (hi - lo).abs() < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

/// Renders line plots; log axes are drawn as log10 of the data.
pub fn render(series: &[Series], axes: Axes<'_>, config_hash: &str) -> Result<String> {
    let data: Vec<(String, Vec<(f64, f64)>)> = series
        .iter()
        .map(|s| {
            let pts = s.points.iter().filter_map(|&(x, y)| Some((tf(x, axes.log_x)?, tf(y, axes.log_y)?))).collect();
            (s.name.clone(), pts)
        })
        .collect();
    let all: Vec<(f64, f64)> = data.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    if all.is_empty() {
        bail!("nothing to plot for `{}`", axes.title);
    }
    let (x0, x1) = padded(all.iter().map(|p| p.0).fold(f64::INFINITY, f64::min), all.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max));
    let (y0, y1) = padded(all.iter().map(|p| p.1).fold(f64::INFINITY, f64::min), all.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max));
    let label = |name: &str, log: bool| if log { format!("log10 {name}") } else { name.to_string() };
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (720, 450)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
        let mut chart = ChartBuilder::on(&root)
            .caption(axes.title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(42)
            .y_label_area_size(64)
            .build_cartesian_2d(x0..x1, y0..y1)
            .map_err(|e| anyhow!("{e}"))?;
        chart
            .configure_mesh()
            .x_desc(label(axes.x, axes.log_x))
            .y_desc(label(axes.y, axes.log_y))
            .draw()
            .map_err(|e| anyhow!("{e}"))?;
        for (i, (name, pts)) in data.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            chart
                .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
                .map_err(|e| anyhow!("{e}"))?
                .label(name.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
            if pts.len() <= 40 {
                chart.draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled()))).map_err(|e| anyhow!("{e}"))?;
            }
        }
        if data.len() > 1 {
            chart
                .configure_series_labels()
                .background_style(WHITE.mix(0.8))
                .border_style(BLACK)
                .draw()
                .map_err(|e| anyhow!("{e}"))?;
        }
        root.present().map_err(|e| anyhow!("{e}"))?;
    }
    // Tag the figure with the config it came from.
    let close = svg.find('>').ok_or_else(|| anyhow!("malformed svg"))? + 1;
    svg.insert_str(close, &format!("\n<desc>config_hash={config_hash}</desc>"));
    Ok(svg)
}

fn series_from(table: &Table, file: &Path, x: &str, y: &str, name: String) -> Result<Series> {
    let xs = table.column(x, file)?;
    let ys = table.column(y, file)?;
    let points = xs.into_iter().zip(ys).filter_map(|(a, b)| Some((a?, b?))).collect();
    Ok(Series { name, points })
}

fn seed_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("seed-")))
        .collect();
    v.sort();
    Ok(v)
}

fn hash_of(table: &Table) -> String {
    table.meta_value("config_hash").unwrap_or("unknown").to_string()
}

/// Writes every plot the artifacts in `dir` support and returns their paths.
pub fn emit_figures(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut save = |name: &str, svg: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, svg).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
        Ok(())
    };

    let mut error_files: Vec<(String, PathBuf)> = Vec::new();
    if dir.join("errors.csv").exists() {
        error_files.push(("run".into(), dir.join("errors.csv")));
    }
    for d in seed_dirs(dir)? {
        let f = d.join("errors.csv");
        if f.exists() {
            error_files.push((d.file_name().unwrap().to_string_lossy().into_owned(), f));
        }
    }
    if !error_files.is_empty() {
        let (mut err, mut res) = (Vec::new(), Vec::new());
        let mut hash = String::new();
        for (name, f) in &error_files {
            let t = Table::read(f)?;
            if t.rows.is_empty() {
                bail!("{} has no rows", f.display());
            }
            hash = hash_of(&t);
            err.push(series_from(&t, f, "time", "per_time_rel_l2", name.clone())?);
            res.push(series_from(&t, f, "time", "residual", name.clone())?);
        }
        let ax = Axes { title: "relative L2 error over time", x: "t", y: "relative error", log_x: false, log_y: true };
        save("error_over_time.svg", render(&err, ax, &hash)?)?;
        let ax = Axes { title: "least-squares residual over time", x: "t", y: "residual", log_x: false, log_y: true };
        save("residual_over_time.svg", render(&res, ax, &hash)?)?;
    }

    let stats = dir.join("sweep_stats.csv");
    if stats.exists() {
        let t = Table::read(&stats)?;
        let s = series_from(&t, &stats, "s", "median_spacetime_rel_l2", "median over seeds".into())?;
        let mut pts = s.points.clone();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut series = vec![Series { points: pts, ..s }];
        let mean = t.column("mean_spacetime_rel_l2", &stats)?;
        let se = t.column("two_se_spacetime_rel_l2", &stats)?;
        let sv = t.column("s", &stats)?;
        let mut lo_hi: Vec<(f64, f64, f64)> =
            sv.iter().zip(&mean).zip(&se).filter_map(|((s, m), e)| Some((s.as_ref()?.to_owned(), m.as_ref()? - e.as_ref()?, m.as_ref()? + e.as_ref()?))).collect();
        lo_hi.sort_by(|a, b| a.0.total_cmp(&b.0));
        series.push(Series { name: "mean + 2 SE".into(), points: lo_hi.iter().map(|&(s, _, h)| (s, h)).collect() });
        series.push(Series { name: "mean - 2 SE".into(), points: lo_hi.iter().map(|&(s, l, _)| (s, l)).collect() });
        let ax = Axes { title: "spacetime error against sketch size", x: "s", y: "relative error", log_x: true, log_y: true };
        save("error_vs_s.svg", render(&series, ax, &hash_of(&t))?)?;
    }

    let spec = dir.join("spectrum.csv");
    if spec.exists() {
        let t = Table::read(&spec)?;
        let mut sig: Vec<f64> = t.column("sigma_rel", &spec)?.into_iter().flatten().collect();
        // Descending, so the curve is non-increasing whatever the file order.
        sig.sort_by(|a, b| b.total_cmp(a));
        let s = Series { name: "sigma_k / sigma_1".into(), points: sig.iter().enumerate().map(|(k, &v)| (k as f64 + 1.0, v)).collect() };
        let ax = Axes { title: "Jacobian singular values", x: "k", y: "sigma_k / sigma_1", log_x: false, log_y: true };
        save("spectrum.svg", render(&[s], ax, &hash_of(&t))?)?;
    }

    let bench = dir.join("bench.csv");
    if bench.exists() {
        let t = Table::read(&bench)?;
        let solve = series_from(&t, &bench, "s", "median_solve_seconds", "solve".into())?;
        let asm = series_from(&t, &bench, "s", "median_assemble_seconds", "assemble".into())?;
        let ax = Axes { title: "per-step time against sketch size", x: "s", y: "seconds", log_x: true, log_y: true };
        save("runtime_vs_s.svg", render(&[solve, asm], ax, &hash_of(&t))?)?;
    }
    Ok(written)
}
