use std::collections::BTreeMap;
use std::path::Path;

use plotters::prelude::*;

use crate::error::{CliError, Result};

type Series = BTreeMap<String, Vec<(f64, f64)>>;

/// Reads `x`/`y` (and optionally `group`) columns; rows with an empty or
/// non-numeric cell are skipped, rows sharing x within a group averaged.
pub fn read_series(csv_path: &Path, x: &str, y: &str, group: Option<&str>) -> Result<Series> {
    let mut r = csv::Reader::from_path(csv_path).map_err(|e| CliError::Config(format!("{}: {e}", csv_path.display())))?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Config(format!("{} has no column `{name}`", csv_path.display())))
    };
    let (xi, yi) = (col(x)?, col(y)?);
    let gi = group.map(col).transpose()?;
    let mut acc: BTreeMap<String, BTreeMap<u64, (f64, f64, usize)>> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let (Ok(xv), Ok(yv)) = (rec[xi].parse::<f64>(), rec[yi].parse::<f64>()) else {
            continue;
        };
        if !(xv.is_finite() && yv.is_finite()) {
            continue;
        }
        let g = gi.map(|i| rec[i].to_string()).unwrap_or_else(|| y.to_string());
        let e = acc.entry(g).or_default().entry(xv.to_bits()).or_insert((xv, 0.0, 0));
        e.1 += yv;
        e.2 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(g, pts)| {
            let mut v: Vec<(f64, f64)> = pts.into_values().map(|(x, s, n)| (x, s / n as f64)).collect();
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            (g, v)
        })
        .collect())
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        (lo - 1.0, hi + 1.0)
    }
}

pub fn plot(csv_path: &Path, x: &str, y: &str, group: Option<&str>, title: Option<&str>, out: &Path) -> Result<()> {
    let series = read_series(csv_path, x, y, group)?;
    let pts: Vec<(f64, f64)> = series.values().flatten().copied().collect();
    if pts.is_empty() {
        return Err(CliError::Runtime(format!("no numeric ({x}, {y}) rows in {}", csv_path.display())));
    }
    let fold = |f: fn(&(f64, f64)) -> f64| {
        pts.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let (x0, x1) = padded(fold(|p| p.0).0, fold(|p| p.0).1);
    let (y0, y1) = padded(fold(|p| p.1).0, fold(|p| p.1).1);

    let root = SVGBackend::new(out, (800, 500)).into_drawing_area();
    let draw = |e: &dyn std::fmt::Display| CliError::Runtime(format!("plot: {e}"));
    root.fill(&WHITE).map_err(|e| draw(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title.unwrap_or(y), ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(55)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| draw(&e))?;
    chart.configure_mesh().x_desc(x).y_desc(y).draw().map_err(|e| draw(&e))?;
    for (i, (name, line)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(line.iter().copied(), color.stroke_width(2)))
            .map_err(|e| draw(&e))?
            .label(name.clone())
            .legend(move |(lx, ly)| PathElement::new(vec![(lx, ly), (lx + 18, ly)], color.stroke_width(2)));
        chart
            .draw_series(line.iter().map(|&p| Circle::new(p, 3, color.filled())))
            .map_err(|e| draw(&e))?;
    }
    if series.len() > 1 {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| draw(&e))?;
    }
    root.present().map_err(|e| draw(&e))?;
    Ok(())
}
