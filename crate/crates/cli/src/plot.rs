//! Deterministic SVG line plots of CSV columns.
//!
//! The x axis is the `t` column when present, otherwise the row number. Each
//! selected column of each file becomes one `<polyline>`; with several files
//! the legend entries are `file:column`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::CliError;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 40.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Numeric table read from a CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let data_err = |message: String| CliError::Data { path: path.display().to_string(), message };
        let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(path, io),
            other => data_err(format!("{other:?}")),
        })?;
        let header: Vec<String> = reader.headers().map_err(|e| data_err(e.to_string()))?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for (k, record) in reader.records().enumerate() {
            // the header is line 1
            let line = k + 2;
            let record = record.map_err(|e| data_err(format!("row {line}: {e}")))?;
            if record.len() != header.len() {
                return Err(data_err(format!("row {line}: {} fields, header has {}", record.len(), header.len())));
            }
            let row = record
                .iter()
                .map(|f| f.trim().parse::<f64>().map_err(|_| data_err(format!("row {line}: `{f}` is not a number"))))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }
}

/// Reads `csvs`, picks `columns` from each, and renders the SVG document.
pub fn series_from_files(csvs: &[PathBuf], columns: &[String]) -> Result<Vec<Series>, CliError> {
    let mut out = Vec::new();
    for path in csvs {
        let table = Table::read(path)?;
        let xs = table.column("t").unwrap_or_else(|| (0..table.rows.len()).map(|k| k as f64).collect());
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for name in columns {
            let ys = table.column(name).ok_or_else(|| CliError::Invalid {
                field: "plot.columns".into(),
                message: format!("no column `{name}` in {} (available: {})", path.display(), table.header.join(", ")),
            })?;
            let label = if csvs.len() > 1 { format!("{stem}:{name}") } else { name.clone() };
            out.push(Series { label, points: xs.iter().copied().zip(ys).collect() });
        }
    }
    Ok(out)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Tick label with trailing zeros trimmed.
fn tick_label(x: f64) -> String {
    let s = format!("{x:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo <= f64::EPSILON * (1.0 + lo.abs()) {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

pub fn render_svg(series: &[Series]) -> String {
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<g stroke="black" stroke-width="1" fill="none">"#);
    let _ = writeln!(svg, r#"<line x1="{LEFT}" y1="{}" x2="{}" y2="{}"/>"#, TOP + plot_h, LEFT + plot_w, TOP + plot_h);
    let _ = writeln!(svg, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}"/>"#, TOP + plot_h);
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, r#"<g font-family="sans-serif" font-size="11" fill="black">"#);
    for k in 0..=5 {
        let fx = x0 + (x1 - x0) * k as f64 / 5.0;
        let fy = y0 + (y1 - y0) * k as f64 / 5.0;
        let (px, py) = (sx(fx), sy(fy));
        let _ = writeln!(
            svg,
            r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + plot_h,
            TOP + plot_h + 5.0,
            TOP + plot_h + 18.0,
            tick_label(fx)
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 5.0,
            LEFT - 8.0,
            py + 4.0,
            tick_label(fy)
        );
    }
    let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">t</text>"#, LEFT + plot_w / 2.0, HEIGHT - 6.0);
    let _ = writeln!(svg, "</g>");

    for (k, s) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let mut points = String::new();
        for (i, (x, y)) in s.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()).enumerate() {
            if i > 0 {
                points.push(' ');
            }
            let _ = write!(points, "{:.2},{:.2}", sx(*x), sy(*y));
        }
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{points}"/>"#);
    }

    let _ = writeln!(svg, r#"<g font-family="sans-serif" font-size="12">"#);
    for (k, s) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let y = TOP + 10.0 + 18.0 * k as f64;
        let x = WIDTH - RIGHT + 15.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{x:.2}" y="{:.2}" width="14" height="3" fill="{colour}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            y - 2.0,
            x + 20.0,
            y + 3.0,
            escape(&s.label)
        );
    }
    let _ = writeln!(svg, "</g>");
    svg.push_str("</svg>\n");
    svg
}

/// Renders `columns` of `csvs` into an SVG file at `out`.
pub fn emit_plot(csvs: &[PathBuf], columns: &[String], out: &Path) -> Result<(), CliError> {
    let series = series_from_files(csvs, columns)?;
    std::fs::write(out, render_svg(&series)).map_err(|e| CliError::io(out, e))
}
