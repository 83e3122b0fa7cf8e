use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::stats::ols;

use super::table::Table;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: &[&str] = &[
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mark {
    #[default]
    Line,
    Scatter,
}

/// What to draw from each CSV.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotStyle {
    pub title: String,
    pub x: String,
    /// One or more y columns, each its own series.
    pub y: Vec<String>,
    /// Splits rows into series by this column's value.
    pub group_by: Option<String>,
    pub mark: Mark,
    pub log_x: bool,
    pub log_y: bool,
    /// Overlay an OLS fit in log–log space and print its slope.
    pub fit: bool,
}

impl PlotStyle {
    /// Sensible defaults for the declared CSV layouts.
    pub fn for_file(file_name: &str) -> Option<Self> {
        let s = |x: &str, y: &[&str]| Self {
            x: x.into(),
            y: y.iter().map(|c| c.to_string()).collect(),
            title: file_name.trim_end_matches(".csv").into(),
            ..Self::default()
        };
        let stem = file_name.trim_end_matches(".csv");
        let base = stem.split('_').collect::<Vec<_>>();
        Some(match () {
            _ if stem.starts_with("tdnv_curve") => s("layer", &["value"]),
            _ if stem.starts_with("grid_tdnv") => Self {
                group_by: Some("sep".into()),
                ..s("layer", &["value"])
            },
            _ if stem.starts_with("bias_variance") => Self {
                log_x: true,
                log_y: true,
                fit: true,
                mark: Mark::Scatter,
                ..s("K", &["bias_ratio", "variance"])
            },
            _ if stem.starts_with("pca") => Self {
                group_by: Some("task".into()),
                mark: Mark::Scatter,
                ..s("x", &["y"])
            },
            _ if stem.starts_with("probe_report") => s(
                "layer",
                &["tv_acc", "mean_tv_acc", "early_exit_acc", "baseline"],
            ),
            _ if stem.starts_with("training_log") => s("step", &["ce", "total"]),
            _ if stem.starts_with("theorem_report") => Self {
                log_x: true,
                log_y: true,
                fit: true,
                mark: Mark::Scatter,
                ..s("K", &["var_est"])
            },
            _ if base.first() == Some(&"sweep") => s("value", &["tdnv_at_opt"]),
            _ => return None,
        })
    }
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

fn series_from(table: &Table, style: &PlotStyle, prefix: &str) -> Result<Vec<Series>> {
    let xs = table.column_f64(&style.x)?;
    let mut out = Vec::new();
    for y in &style.y {
        let ys = table.column_f64(y)?;
        match &style.group_by {
            Some(g) => {
                let keys = table.column(g)?;
                let mut order: Vec<&str> = Vec::new();
                for k in &keys {
                    if !order.contains(k) {
                        order.push(k);
                    }
                }
                for key in order {
                    let points = keys
                        .iter()
                        .zip(xs.iter().zip(&ys))
                        .filter(|(k, _)| **k == key)
                        .map(|(_, (&x, &y))| (x, y))
                        .collect();
                    out.push(Series {
                        label: format!("{prefix}{y} {g}={key}"),
                        points,
                    });
                }
            }
            None => out.push(Series {
                label: format!("{prefix}{y}"),
                points: xs.iter().copied().zip(ys.iter().copied()).collect(),
            }),
        }
    }
    Ok(out)
}

fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / n as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= n as f64)
        .unwrap_or(10.0 * mag);
    let start = (lo / step).ceil() as i64;
    let end = (hi / step).floor() as i64;
    (start..=end).map(|i| i as f64 * step).collect()
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-3 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Renders one or more CSV tables into a standalone SVG document.
pub fn plot_tables(tables: &[(String, Table)], style: &PlotStyle) -> Result<String> {
    if style.y.is_empty() {
        return Err(Error::Invalid("plot style names no y column".into()));
    }
    let mut series = Vec::new();
    for (name, t) in tables {
        let prefix = if tables.len() > 1 {
            format!("{name}: ")
        } else {
            String::new()
        };
        series.extend(series_from(t, style, &prefix)?);
    }
    let tx = |v: f64| if style.log_x { v.log10() } else { v };
    let ty = |v: f64| if style.log_y { v.log10() } else { v };
    let usable = |&(x, y): &(f64, f64)| {
        x.is_finite() && y.is_finite() && (!style.log_x || x > 0.0) && (!style.log_y || y > 0.0)
    };
    for s in &mut series {
        s.points.retain(usable);
    }
    if let Some(s) = series.iter().find(|s| s.points.is_empty()) {
        return Err(Error::Invalid(format!(
            "series `{}` has no plottable points",
            s.label
        )));
    }
    let all: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|&(x, y)| (tx(x), ty(y))))
        .collect();
    let (mut x0, mut x1) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(p.0), b.max(p.0))
        });
    let (mut y0, mut y1) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(p.1), b.max(p.1))
        });
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = (y1 - y0) * 0.05;
    y0 -= pad;
    y1 += pad;
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(&style.title)
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="black"/>"#
    );
    for t in nice_ticks(x0, x1, 8) {
        let label = if style.log_x {
            fmt_tick(10f64.powf(t))
        } else {
            fmt_tick(t)
        };
        let _ = writeln!(
            svg,
            r#"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="black"/><text x="{0:.1}" y="{3:.1}" text-anchor="middle">{4}</text>"#,
            px(t),
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 18.0,
            label
        );
    }
    for t in nice_ticks(y0, y1, 6) {
        let label = if style.log_y {
            fmt_tick(10f64.powf(t))
        } else {
            fmt_tick(t)
        };
        let _ = writeln!(
            svg,
            r#"<line x1="{0:.1}" y1="{1:.1}" x2="{2:.1}" y2="{1:.1}" stroke="black"/><text x="{3:.1}" y="{4:.1}" text-anchor="end">{5}</text>"#,
            LEFT - 5.0,
            py(t),
            LEFT,
            LEFT - 8.0,
            py(t) + 4.0,
            label
        );
    }
    let axis = |name: &str, log: bool| {
        if log {
            format!("{name} (log)")
        } else {
            name.to_string()
        }
    };
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 10.0,
        escape(&axis(&style.x, style.log_x))
    );
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{0:.1}" text-anchor="middle" transform="rotate(-90 15 {0:.1})">{1}</text>"#,
        TOP + ph / 2.0,
        escape(&axis(&style.y.join(", "), style.log_y))
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = s
            .points
            .iter()
            .map(|&(x, y)| (px(tx(x)), py(ty(y))))
            .collect();
        if style.mark == Mark::Line && pts.len() > 1 {
            let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                path.join(" ")
            );
        }
        for (x, y) in &pts {
            let _ = writeln!(
                svg,
                r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{color}"/>"#
            );
        }
        let mut legend = s.label.clone();
        if style.fit && style.log_x && style.log_y && s.points.len() >= 2 {
            let lx: Vec<f64> = s.points.iter().map(|p| p.0.log10()).collect();
            let ly: Vec<f64> = s.points.iter().map(|p| p.1.log10()).collect();
            if let Ok((slope, icpt)) = ols(&lx, &ly) {
                let (a, b) = (
                    lx.iter().copied().fold(f64::INFINITY, f64::min),
                    lx.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                );
                let _ = writeln!(
                    svg,
                    r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-dasharray="5,3"/>"#,
                    px(a),
                    py(slope * a + icpt),
                    px(b),
                    py(slope * b + icpt)
                );
                legend = format!("{legend} (slope {slope:.3})");
            }
        }
        let ly = TOP + 12.0 + 16.0 * i as f64;
        let lx = W - RIGHT + 10.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{lx:.1}" y="{:.1}" width="10" height="10" fill="{color}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            ly - 9.0,
            lx + 14.0,
            ly,
            escape(&legend)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Reads CSVs and renders them; the style defaults from the first file's name.
pub fn plot_curves(paths: &[impl AsRef<Path>], style: Option<&PlotStyle>) -> Result<String> {
    let first = paths
        .first()
        .ok_or_else(|| Error::Invalid("no CSV files to plot".into()))?;
    let name = first
        .as_ref()
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default()
        .to_string();
    let style = match style {
        Some(s) => s.clone(),
        None => PlotStyle::for_file(&name).ok_or_else(|| {
            Error::Invalid(format!(
                "no default plot style for `{name}`; pass one explicitly"
            ))
        })?,
    };
    let tables = paths
        .iter()
        .map(|p| {
            let p = p.as_ref();
            let label = p
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            Ok((label, Table::read(p)?))
        })
        .collect::<Result<Vec<_>>>()?;
    for (_, t) in &tables {
        if t.rows.is_empty() {
            return Err(Error::Invalid("empty series: CSV has no rows".into()));
        }
    }
    plot_tables(&tables, &style)
}
