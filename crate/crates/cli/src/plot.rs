use std::fs::File;
use std::path::Path;

use plotters::prelude::*;
use serde::Deserialize;

use crate::CliError;

type Series = (String, Vec<(f64, f64)>);

fn plot_err(e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("plot: {e}"))
}

pub(crate) fn lines(series: &[Series], caption: &str, x_desc: &str, y_desc: &str, path: &Path) -> Result<(), CliError> {
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (0.0f64, 1.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    if y1 - y0 < 1e-9 {
        y1 = y0 + 1.0;
    }
    let pad = 0.05 * (y1 - y0);

    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(caption, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(64)
        .build_cartesian_2d(x0..x1, (y0 - pad)..(y1 + pad))
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc(x_desc).y_desc(y_desc).draw().map_err(plot_err)?;
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(label.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
    }
    if !series.is_empty() {
        chart
            .configure_series_labels()
            .border_style(BLACK)
            .background_style(WHITE.mix(0.8))
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

#[derive(Deserialize)]
struct RegretCsvRow {
    p: f64,
    n_states: usize,
    delta: String,
    #[serde(rename = "N")]
    depth: usize,
    policy: String,
    delay_regret: f64,
}

/// Delay regret per decision against depth, one line per `(p, n, δ, policy)`.
pub(crate) fn regret(csv_path: &Path, path: &Path) -> Result<(), CliError> {
    let file = File::open(csv_path).map_err(|e| CliError::Io(format!("{}: {e}", csv_path.display())))?;
    let rows: Vec<RegretCsvRow> = csv::Reader::from_reader(file).deserialize().collect::<Result<_, _>>().map_err(plot_err)?;
    let mut series: Vec<Series> = Vec::new();
    for r in rows {
        let label = format!("{} p={} n={} δ={}", r.policy, r.p, r.n_states, r.delta);
        match series.iter_mut().find(|(l, _)| *l == label) {
            Some((_, pts)) => pts.push((r.depth as f64, r.delay_regret)),
            None => series.push((label, vec![(r.depth as f64, r.delay_regret)])),
        }
    }
    lines(&series, "delay regret per decision", "N", "regret", path)
}
