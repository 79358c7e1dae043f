//! SVG training curves and evaluation bar charts.

use std::path::{Path, PathBuf};

use plotters::prelude::*;
use vispgan::eval::EvalReport;
use vispgan::trainer::MetricsLog;

use crate::{CliError, CliResult};

const SIZE: (u32, u32) = (720, 420);

fn plot_err(e: impl std::fmt::Display) -> CliError {
    CliError::Plot(e.to_string())
}

/// The x-axis column of a log: `step` for GAN logs, `epoch` otherwise.
pub fn x_column(log: &MetricsLog) -> CliResult<&'static str> {
    ["step", "epoch"]
        .into_iter()
        .find(|c| log.columns.iter().any(|x| x == c))
        .ok_or_else(|| CliError::Usage("metrics log has neither a step nor an epoch column".into()))
}

/// Every column except the x axis, the epoch counter and the learning rate.
pub fn default_columns(log: &MetricsLog) -> Vec<String> {
    log.columns
        .iter()
        .filter(|c| !matches!(c.as_str(), "step" | "epoch" | "lr"))
        .cloned()
        .collect()
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
            (l.min(v), h.max(v))
        });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo {
        0.05 * (hi - lo)
    } else {
        lo.abs().max(1.0) * 0.05
    };
    (lo - pad, hi + pad)
}

fn line_chart(path: &Path, title: &str, x_label: &str, xs: &[f64], ys: &[f64]) -> CliResult<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let (x0, x1) = range(xs.iter().copied());
    let (y0, y1) = range(ys.iter().copied());
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(64)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(title)
        .draw()
        .map_err(plot_err)?;
    let points: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(_, y)| y.is_finite())
        .map(|(&x, &y)| (x, y))
        .collect();
    chart
        .draw_series(LineSeries::new(points, &BLUE))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// One `<column>.svg` per requested column against the x-axis column.
pub fn plot_metrics(
    log: &MetricsLog,
    columns: &[String],
    out_dir: &Path,
) -> CliResult<Vec<PathBuf>> {
    if log.rows.is_empty() {
        return Err(CliError::Usage("metrics log has no rows".into()));
    }
    let x_name = x_column(log)?;
    let xs = log.column(x_name)?;
    // Resolve every column before drawing so a typo writes nothing.
    let series: Vec<(&String, Vec<f64>)> = columns
        .iter()
        .map(|c| Ok((c, log.column(c)?)))
        .collect::<CliResult<_>>()?;
    std::fs::create_dir_all(out_dir).map_err(|e| vispgan::Error::io(out_dir, e))?;
    let mut paths = Vec::with_capacity(series.len());
    for (name, ys) in series {
        let path = out_dir.join(format!("{name}.svg"));
        line_chart(&path, name, x_name, &xs, &ys)?;
        paths.push(path);
    }
    Ok(paths)
}

fn bar_panel(
    area: &DrawingArea<SVGBackend, plotters::coord::Shift>,
    title: &str,
    bars: &[(String, f64)],
) -> CliResult<()> {
    let (_, hi) = range(bars.iter().map(|b| b.1).chain([0.0]));
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d((0..bars.len()).into_segmented(), 0.0..hi)
        .map_err(plot_err)?;
    let labels: Vec<String> = bars.iter().map(|b| b.0.clone()).collect();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_label_formatter(&|v| match v {
            SegmentValue::CenterOf(i) => labels.get(*i).cloned().unwrap_or_default(),
            _ => String::new(),
        })
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(bars.iter().enumerate().map(|(i, (_, v))| {
            Rectangle::new(
                [
                    (SegmentValue::Exact(i), 0.0),
                    (SegmentValue::Exact(i + 1), v.max(0.0)),
                ],
                BLUE.mix(0.6).filled(),
            )
        }))
        .map_err(plot_err)?;
    Ok(())
}

/// Accuracy on fakes (with identity and chance references) beside FID
/// (with the noise reference).
pub fn plot_report(report: &EvalReport, path: &Path) -> CliResult<()> {
    let root = SVGBackend::new(path, (2 * SIZE.0, SIZE.1)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let panels = root.split_evenly((1, 2));
    let mut acc = vec![
        ("chance".to_string(), report.chance),
        ("identity".to_string(), report.identity_accuracy),
    ];
    let mut fid = vec![("noise".to_string(), report.fid_noise)];
    for m in &report.models {
        acc.push((m.mode.name().to_string(), m.accuracy));
        fid.push((m.mode.name().to_string(), m.fid_mean));
    }
    bar_panel(&panels[0], "accuracy on fakes", &acc)?;
    bar_panel(&panels[1], "FID", &fid)?;
    root.present().map_err(plot_err)
}
