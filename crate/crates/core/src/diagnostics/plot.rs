use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::metrics::MetricsTable;
use super::DiagError;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotOptions {
    pub log_scale: bool,
    pub title: Option<String>,
}

/// Per-step aggregate of one key across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub key: String,
    pub steps: Vec<f64>,
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub runs: usize,
}

impl Series {
    pub fn has_band(&self) -> bool {
        self.runs > 1
    }
}

/// Groups `key` by `env_steps` over every table. NaN entries (and
/// non-positive ones under a log scale) are skipped.
pub fn aggregate(tables: &[MetricsTable], key: &str, log_scale: bool) -> Result<Series, DiagError> {
    let mut by_step: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for t in tables {
        let steps = t.column("env_steps")?;
        let values = t.column(key)?;
        for (s, v) in steps.into_iter().zip(values) {
            if v.is_finite() && (!log_scale || v > 0.0) {
                by_step.entry(s as u64).or_default().push(v);
            }
        }
    }
    let mut series = Series {
        key: key.to_string(),
        steps: Vec::new(),
        mean: Vec::new(),
        min: Vec::new(),
        max: Vec::new(),
        runs: tables.len(),
    };
    for (step, vals) in by_step {
        series.steps.push(step as f64);
        series.mean.push(vals.iter().sum::<f64>() / vals.len() as f64);
        series.min.push(vals.iter().copied().fold(f64::INFINITY, f64::min));
        series.max.push(vals.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    Ok(series)
}

fn bounds(series: &[Series], log_scale: bool) -> ((f64, f64), (f64, f64)) {
    let xs = series.iter().flat_map(|s| s.steps.iter().copied());
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let ys = series.iter().flat_map(|s| s.min.iter().chain(&s.max).copied());
    let (mut y0, mut y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
    if !x0.is_finite() {
        return ((0.0, 1.0), if log_scale { (0.1, 1.0) } else { (0.0, 1.0) });
    }
    let x1 = if x1 > x0 { x1 } else { x0 + 1.0 };
    if log_scale {
        y0 *= 0.8;
        y1 *= 1.25;
    } else {
        let pad = ((y1 - y0) * 0.05).max(1e-9);
        y0 -= pad;
        y1 += pad;
    }
    ((x0, x1), (y0, y1))
}

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(255, 127, 14),
    RGBColor(148, 103, 189),
    RGBColor(23, 190, 207),
];

/// Draws each key against `env_steps` as the mean over `files`, with a
/// shaded min-max band when there is more than one file. Writes SVG.
pub fn emit_plot(files: &[PathBuf], keys: &[String], path: &Path, options: &PlotOptions) -> Result<(), DiagError> {
    if files.is_empty() {
        return Err(DiagError::EmptyInput("metrics files"));
    }
    if keys.is_empty() {
        return Err(DiagError::EmptyInput("plot keys"));
    }
    let tables: Vec<MetricsTable> = files.iter().map(|f| MetricsTable::read(f)).collect::<Result<_, _>>()?;
    let series: Vec<Series> = keys
        .iter()
        .map(|k| aggregate(&tables, k, options.log_scale))
        .collect::<Result<_, _>>()?;
    let svg = render(&series, options)?;
    std::fs::write(path, svg)?;
    Ok(())
}

fn plot_err<E: std::fmt::Display>(e: E) -> DiagError {
    DiagError::Plot(e.to_string())
}

/// Renders the series into an SVG document.
pub fn render(series: &[Series], options: &PlotOptions) -> Result<String, DiagError> {
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (800, 500)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let ((x0, x1), (y0, y1)) = bounds(series, options.log_scale);
        let title = options.title.clone().unwrap_or_else(|| {
            series.iter().map(|s| s.key.as_str()).collect::<Vec<_>>().join(", ")
        });
        let mut builder = ChartBuilder::on(&root);
        builder
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(70);
        if options.log_scale {
            let mut chart = builder
                .build_cartesian_2d(x0..x1, (y0..y1).log_scale())
                .map_err(plot_err)?;
            chart
                .configure_mesh()
                .x_desc("env_steps")
                .draw()
                .map_err(plot_err)?;
            draw_series(&mut chart, series)?;
        } else {
            let mut chart = builder.build_cartesian_2d(x0..x1, y0..y1).map_err(plot_err)?;
            chart
                .configure_mesh()
                .x_desc("env_steps")
                .draw()
                .map_err(plot_err)?;
            draw_series(&mut chart, series)?;
        }
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}

fn draw_series<'a, DB, X, Y>(
    chart: &mut ChartContext<'a, DB, Cartesian2d<X, Y>>,
    series: &[Series],
) -> Result<(), DiagError>
where
    DB: DrawingBackend + 'a,
    X: Ranged<ValueType = f64>,
    Y: Ranged<ValueType = f64>,
{
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if s.has_band() && !s.steps.is_empty() {
            let mut outline: Vec<(f64, f64)> = s.steps.iter().copied().zip(s.max.iter().copied()).collect();
            outline.extend(s.steps.iter().copied().zip(s.min.iter().copied()).rev());
            chart
                .draw_series(std::iter::once(Polygon::new(outline, color.mix(0.2).filled())))
                .map_err(plot_err)?;
        }
        let points: Vec<(f64, f64)> = s.steps.iter().copied().zip(s.mean.iter().copied()).collect();
        chart
            .draw_series(LineSeries::new(points, color.stroke_width(2)))
            .map_err(plot_err)?
            .label(s.key.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    Ok(())
}
