//! Deterministic SVG line charts from CSV files that share a `time` column.
//!
//! Every column after `time` becomes one polyline, except `_std` columns of
//! aggregate files and a `realisation` index column. The SVG text depends
//! only on the input values, so identical CSVs give identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

/// A set of series sampled at common times.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Chart {
    pub times: Vec<f64>,
    pub series: Vec<Series>,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 50.0;
const TICKS: usize = 5;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn plot_err(path: &Path, what: impl std::fmt::Display) -> CliError {
    CliError::Plot(format!("{}: {what}", path.display()))
}

fn skipped(column: &str) -> bool {
    column.ends_with("_std") || column == "realisation"
}

/// Reads one CSV whose first column is `time`.
pub fn read_csv(path: &Path) -> Result<Chart, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| plot_err(path, e))?;
    let headers = reader.headers().map_err(|e| plot_err(path, e))?.clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(plot_err(path, "empty file"));
    }
    if headers.get(0).map(str::trim) != Some("time") {
        return Err(plot_err(path, "first column must be `time`"));
    }
    let mut chart = Chart {
        times: Vec::new(),
        series: headers
            .iter()
            .skip(1)
            .map(|h| Series {
                name: h.trim().to_string(),
                values: Vec::new(),
            })
            .collect(),
    };
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| plot_err(path, e))?;
        let parse = |field: &str| -> Result<f64, CliError> {
            field
                .trim()
                .parse::<f64>()
                .map_err(|_| plot_err(path, format!("row {}: {field:?} is not a number", line + 2)))
        };
        chart.times.push(parse(&record[0])?);
        for (series, field) in chart.series.iter_mut().zip(record.iter().skip(1)) {
            series.values.push(parse(field)?);
        }
    }
    if chart.times.is_empty() {
        return Err(plot_err(path, "no data rows"));
    }
    chart.series.retain(|s| !skipped(&s.name));
    if chart.series.is_empty() {
        return Err(plot_err(path, "no series to plot"));
    }
    Ok(chart)
}

/// Merges files with identical time columns. With several files each
/// legend entry is prefixed by the file stem.
pub fn load(paths: &[&Path]) -> Result<Chart, CliError> {
    let first = paths.first().ok_or_else(|| CliError::Plot("no input files".into()))?;
    let mut merged = Chart {
        times: Vec::new(),
        series: Vec::new(),
    };
    for (k, path) in paths.iter().enumerate() {
        let chart = read_csv(path)?;
        if k == 0 {
            merged.times = chart.times;
        } else if chart.times != merged.times {
            return Err(plot_err(path, format!("time column differs from {}", first.display())));
        }
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for s in chart.series {
            let name = if paths.len() > 1 { format!("{stem}:{}", s.name) } else { s.name };
            merged.series.push(Series { name, values: s.values });
        }
    }
    Ok(merged)
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 * lo.abs().max(1.0) {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn tick_label(v: f64) -> String {
    let s = format!("{:.4}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders the chart. Non-finite points are left out of their polyline.
pub fn render_svg(chart: &Chart) -> String {
    let (x0, x1) = range(chart.times.iter().copied());
    let (y0, y1) = range(chart.series.iter().flat_map(|s| s.values.iter().copied()));
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for k in 0..=TICKS {
        let f = k as f64 / TICKS as f64;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            svg,
            r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + plot_h,
            TOP + plot_h + 5.0,
            TOP + plot_h + 20.0,
            tick_label(xv)
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 5.0,
            LEFT - 8.0,
            py + 4.0,
            tick_label(yv)
        );
    }
    let y_label = match chart.series.as_slice() {
        [only] => escape(&only.name),
        _ => "value".to_string(),
    };
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">time</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{0:.2}" text-anchor="middle" transform="rotate(-90 15 {0:.2})">{y_label}</text>"#,
        TOP + plot_h / 2.0
    );
    for (k, s) in chart.series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = chart
            .times
            .iter()
            .zip(&s.values)
            .filter(|(t, v)| t.is_finite() && v.is_finite())
            .map(|(&t, &v)| format!("{:.2},{:.2}", sx(t), sy(v)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = TOP + 10.0 + 18.0 * k as f64;
        let lx = LEFT + plot_w + 15.0;
        let _ = writeln!(
            svg,
            r#"<g class="legend"><line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{colour}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text></g>"#,
            lx + 20.0,
            lx + 25.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Reads `inputs` and writes the chart to `out`. Nothing is written when
/// any input is unusable.
pub fn plot(inputs: &[&Path], out: &Path) -> Result<(), CliError> {
    let chart = load(inputs)?;
    let svg = render_svg(&chart);
    fs::write(out, svg)?;
    Ok(())
}
