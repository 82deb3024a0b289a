//! SVG figures from run and replication CSV files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::de::DeserializeOwned;

use super::{Method, ParticleRow, ReplicationRow, TraceRow};
use crate::error::{Error, Result};
use crate::numeric::quantile;

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

/// Reads a CSV after checking that every required column is present.
fn read_checked<T: DeserializeOwned>(path: &Path, required: &[&str]) -> Result<Vec<T>> {
    let schema = |message: String| Error::Schema {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let missing: Vec<&str> = required
        .iter()
        .copied()
        .filter(|c| !headers.iter().any(|h| h == *c))
        .collect();
    if !missing.is_empty() {
        return Err(schema(format!("missing column(s): {}", missing.join(", "))));
    }
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| schema(e.to_string()))
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let span = (hi - lo).abs().max(1e-9);
    (lo - 0.05 * span, hi + 0.05 * span)
}

/// Particle values of `m` at each dumped step, with the posterior-mean line
/// and the truncation endpoints. Returns the number of dumped steps drawn.
pub fn plot_particles(trace_csv: &Path, particles_csv: &Path, out: &Path) -> Result<usize> {
    let trace: Vec<TraceRow> = read_checked(trace_csv, &["t", "posterior_mean_m", "l", "r"])?;
    let particles: Vec<ParticleRow> = read_checked(particles_csv, &["t", "i", "m", "c", "weight"])?;
    let mut slices: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for p in &particles {
        slices.entry(p.t).or_default().push(p.m);
    }

    let t_max = trace
        .iter()
        .map(|r| r.t)
        .chain(slices.keys().copied())
        .max()
        .unwrap_or(0)
        .max(1);
    // keep the axis on the particles and the mean; early intervals can be huge
    let values: Vec<f64> = particles
        .iter()
        .map(|p| p.m)
        .chain(trace.iter().map(|r| r.posterior_mean_m))
        .filter(|v| v.is_finite())
        .collect();
    let (lo, hi) = if values.is_empty() {
        (-1.0, 1.0)
    } else {
        padded(quantile(&values, 0.0), quantile(&values, 1.0))
    };

    let root = SVGBackend::new(out, (900, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(50)
        .build_cartesian_2d(0f64..t_max as f64, lo..hi)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("t")
        .y_desc("m")
        .draw()
        .map_err(plot_err)?;

    let dots = slices
        .iter()
        .flat_map(|(&t, ms)| ms.iter().map(move |&m| (t as f64, m)));
    chart
        .draw_series(
            dots.filter(|&(_, m)| m >= lo && m <= hi)
                .map(|p| Circle::new(p, 1, BLUE.mix(0.3).filled())),
        )
        .map_err(plot_err)?;
    let clip = |v: f64| v.clamp(lo, hi);
    let line = |f: fn(&TraceRow) -> f64| trace.iter().map(move |r| (r.t as f64, clip(f(r)))).collect::<Vec<_>>();
    chart
        .draw_series(LineSeries::new(line(|r| r.posterior_mean_m), BLACK.stroke_width(2)))
        .map_err(plot_err)?;
    chart
        .draw_series(LineSeries::new(line(|r| r.l), RED))
        .map_err(plot_err)?;
    chart
        .draw_series(LineSeries::new(line(|r| r.r), RED))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(slices.len())
}

/// Box plots of the final posterior means across replications, grouped by
/// epsilon and method. Returns `None` without writing when no run succeeded.
pub fn plot_replications(runs_csv: &Path, out_prefix: &Path) -> Result<Option<Vec<PathBuf>>> {
    let rows: Vec<ReplicationRow> = read_checked(runs_csv, &["method", "epsilon", "mean_m", "mean_c", "status"])?;
    let ok: Vec<&ReplicationRow> = rows.iter().filter(|r| r.status == "ok").collect();
    if ok.is_empty() {
        return Ok(None);
    }
    let mut epsilons: Vec<f64> = ok.iter().map(|r| r.epsilon).collect();
    epsilons.sort_by(f64::total_cmp);
    epsilons.dedup();
    let methods = [Method::Adaptive, Method::Nonadaptive, Method::Batch];

    let mut written = Vec::new();
    for (name, get) in [
        ("m", (|r: &ReplicationRow| r.mean_m) as fn(&ReplicationRow) -> f64),
        ("c", |r| r.mean_c),
    ] {
        let path = PathBuf::from(format!("{}_box_{name}.svg", out_prefix.display()));
        let values: Vec<f64> = ok.iter().map(|r| get(r)).collect();
        let (lo, hi) = padded(quantile(&values, 0.0), quantile(&values, 1.0));
        let groups = epsilons.len() * methods.len();

        let root = SVGBackend::new(&path, (900, 500)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .margin(10)
            .x_label_area_size(35)
            .y_label_area_size(50)
            .build_cartesian_2d(-0.5f64..groups as f64 - 0.5, lo..hi)
            .map_err(plot_err)?;
        let label = |x: &f64| {
            let k = x.round();
            if (x - k).abs() > 1e-9 || k < 0.0 || k as usize >= groups {
                return String::new();
            }
            let k = k as usize;
            format!("{} e={}", methods[k % methods.len()], epsilons[k / methods.len()])
        };
        chart
            .configure_mesh()
            .x_labels(groups)
            .x_label_formatter(&label)
            .disable_x_mesh()
            .y_desc(name)
            .draw()
            .map_err(plot_err)?;

        let palette = [BLUE, RED, GREEN];
        for (ei, &eps) in epsilons.iter().enumerate() {
            for (mi, method) in methods.iter().enumerate() {
                let vals: Vec<f64> = ok
                    .iter()
                    .filter(|r| r.epsilon == eps && r.method == *method)
                    .map(|r| get(r))
                    .collect();
                if vals.is_empty() {
                    continue;
                }
                let x = (ei * methods.len() + mi) as f64;
                let q = |p| quantile(&vals, p);
                let (min, q1, med, q3, max) = (q(0.0), q(0.25), q(0.5), q(0.75), q(1.0));
                let color = palette[mi];
                chart
                    .draw_series(std::iter::once(Rectangle::new(
                        [(x - 0.3, q1), (x + 0.3, q3)],
                        color.stroke_width(1),
                    )))
                    .map_err(plot_err)?;
                let segments = [
                    vec![(x - 0.3, med), (x + 0.3, med)],
                    vec![(x, q3), (x, max)],
                    vec![(x, q1), (x, min)],
                    vec![(x - 0.15, max), (x + 0.15, max)],
                    vec![(x - 0.15, min), (x + 0.15, min)],
                ];
                chart
                    .draw_series(segments.into_iter().map(|s| PathElement::new(s, color.stroke_width(1))))
                    .map_err(plot_err)?;
            }
        }
        root.present().map_err(plot_err)?;
        written.push(path.clone());
    }
    Ok(Some(written))
}

/// What [`emit_plots`] produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotReport {
    pub files: Vec<PathBuf>,
    /// Dumped steps drawn per particle plot, in file order.
    pub slices: Vec<usize>,
    pub notices: Vec<String>,
}

/// Renders every `*_trace.csv` that has a matching `*_particles.csv`, and
/// every `replicate_seed*_runs.csv`, found in `input`, into `out`.
pub fn emit_plots(input: &Path, out: &Path) -> Result<PlotReport> {
    std::fs::create_dir_all(out)?;
    let mut names: Vec<String> = std::fs::read_dir(input)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    names.sort();
    let mut report = PlotReport::default();
    for name in &names {
        if let Some(stem) = name.strip_suffix("_trace.csv") {
            let particles = input.join(format!("{stem}_particles.csv"));
            if !particles.exists() {
                report.notices.push(format!("{name}: no particle dump, skipped"));
                continue;
            }
            let file = out.join(format!("{stem}_particles_m.svg"));
            let slices = plot_particles(&input.join(name), &particles, &file)?;
            report.files.push(file);
            report.slices.push(slices);
        } else if let Some(stem) = name.strip_suffix("_runs.csv").filter(|s| s.starts_with("replicate_")) {
            match plot_replications(&input.join(name), &out.join(stem))? {
                Some(files) => report.files.extend(files),
                None => report
                    .notices
                    .push(format!("{name}: no successful runs, no box plot written")),
            }
        }
    }
    if report.files.is_empty() && report.notices.is_empty() {
        report.notices.push(format!("nothing to plot in {}", input.display()));
    }
    Ok(report)
}
