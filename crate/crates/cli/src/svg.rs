//! Minimal deterministic SVG charts: line plots with optional vertical
//! markers, and grouped bar panels. No timestamps or random ids are emitted.

use std::fmt::Write;

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
/// Longer series are reduced to per-bucket min and max.
const MAX_BUCKETS: usize = 1200;
const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

pub struct Line<'a> {
    pub name: &'a str,
    pub values: &'a [f64],
}

pub struct LineChart<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    /// Labels printed under the left and right ends of the x axis.
    pub x_range_labels: Option<(String, String)>,
    pub lines: Vec<Line<'a>>,
    /// Indices drawn as dashed vertical lines.
    pub markers: &'a [usize],
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(out: &mut String, width: f64, height: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
}

fn finite_bounds<'a>(values: impl Iterator<Item = &'a f64>) -> Option<(f64, f64)> {
    values.filter(|v| v.is_finite()).fold(None, |acc, &v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi - lo < 1e-12 {
        (lo - 1.0, hi + 1.0)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

/// `(index, value)` vertices, min/max-decimated when the series is long.
fn decimate(values: &[f64]) -> Vec<(usize, f64)> {
    if values.len() <= 2 * MAX_BUCKETS {
        return values.iter().copied().enumerate().filter(|(_, v)| v.is_finite()).collect();
    }
    let size = values.len().div_ceil(MAX_BUCKETS);
    let mut pts = Vec::with_capacity(2 * MAX_BUCKETS);
    for (b, chunk) in values.chunks(size).enumerate() {
        let finite = chunk.iter().copied().enumerate().filter(|(_, v)| v.is_finite());
        let lo = finite.clone().min_by(|a, b| a.1.total_cmp(&b.1));
        let hi = finite.max_by(|a, b| a.1.total_cmp(&b.1));
        if let (Some(lo), Some(hi)) = (lo, hi) {
            let (first, second) = if lo.0 <= hi.0 { (lo, hi) } else { (hi, lo) };
            pts.push((b * size + first.0, first.1));
            if second.0 != first.0 {
                pts.push((b * size + second.0, second.1));
            }
        }
    }
    pts
}

/// Plot area in pixels.
#[derive(Clone, Copy)]
struct Area {
    x0: f64,
    x1: f64,
    top: f64,
    bottom: f64,
}

fn axes(out: &mut String, title: &str, x_label: &str, y_label: &str, y: (f64, f64), area: Area) {
    let Area { x0, x1, top, bottom } = area;
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle" font-size="15">{}</text>"#, (x0 + x1) / 2.0, top - 16.0, escape(title));
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{bottom}" x2="{x1}" y2="{bottom}" stroke="black"/>"#);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{top}" x2="{x0}" y2="{bottom}" stroke="black"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, bottom + 36.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        (top + bottom) / 2.0,
        (top + bottom) / 2.0,
        escape(y_label)
    );
    for k in 0..=4 {
        let v = y.0 + (y.1 - y.0) * k as f64 / 4.0;
        let py = bottom - (bottom - top) * k as f64 / 4.0;
        let _ = writeln!(out, r##"<line x1="{x0}" y1="{py:.2}" x2="{x1}" y2="{py:.2}" stroke="#e0e0e0"/>"##);
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 4.0, py + 4.0, tick(v));
    }
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

pub fn line_chart(chart: &LineChart) -> String {
    let mut out = String::new();
    header(&mut out, WIDTH, HEIGHT);
    let (x0, x1, top, bottom) = (MARGIN + 10.0, WIDTH - 20.0, MARGIN, HEIGHT - MARGIN);
    let n = chart.lines.iter().map(|l| l.values.len()).max().unwrap_or(0);
    let y = finite_bounds(chart.lines.iter().flat_map(|l| l.values.iter())).map_or((-1.0, 1.0), |(lo, hi)| padded(lo, hi));
    axes(&mut out, chart.title, chart.x_label, chart.y_label, y, Area { x0, x1, top, bottom });
    let span = n.saturating_sub(1).max(1) as f64;
    let px = |i: usize| x0 + (x1 - x0) * i as f64 / span;
    let py = |v: f64| bottom - (bottom - top) * (v - y.0) / (y.1 - y.0);
    if let Some((left, right)) = &chart.x_range_labels {
        let _ = writeln!(out, r#"<text x="{x0}" y="{}" text-anchor="start">{}</text>"#, bottom + 18.0, escape(left));
        let _ = writeln!(out, r#"<text x="{x1}" y="{}" text-anchor="end">{}</text>"#, bottom + 18.0, escape(right));
    }
    for (k, line) in chart.lines.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut d = String::new();
        for (j, (i, v)) in decimate(line.values).into_iter().enumerate() {
            let _ = write!(d, "{}{:.2},{:.2}", if j == 0 { "M" } else { " L" }, px(i), py(v));
        }
        let _ = writeln!(out, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1"/>"#);
        let ly = top + 4.0 + 16.0 * k as f64;
        let _ = writeln!(out, r#"<rect x="{}" y="{ly}" width="12" height="3" fill="{color}"/>"#, x1 - 150.0);
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, x1 - 132.0, ly + 5.0, escape(line.name));
    }
    for &m in chart.markers {
        let x = px(m);
        let _ = writeln!(out, r##"<line x1="{x:.2}" y1="{top}" x2="{x:.2}" y2="{bottom}" stroke="#d62728" stroke-dasharray="4,3" class="changepoint"/>"##);
    }
    out.push_str("</svg>\n");
    out
}

pub struct BarPanel<'a> {
    pub title: &'a str,
    /// One value per (group, series) pair, `None` when absent.
    pub values: Vec<Vec<Option<f64>>>,
}

/// Side-by-side panels sharing the same groups (x categories) and series
/// (bar colors within a group).
pub fn grouped_bars(title: &str, groups: &[String], series: &[String], panels: &[BarPanel]) -> String {
    let panel_w = 320.0;
    let width = panel_w * panels.len().max(1) as f64;
    let mut out = String::new();
    header(&mut out, width, HEIGHT);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="16">{}</text>"#, width / 2.0, escape(title));
    for (p, panel) in panels.iter().enumerate() {
        let _ = writeln!(out, r#"<g class="panel" transform="translate({} 0)">"#, p as f64 * panel_w);
        let (x0, x1, top, bottom) = (MARGIN + 10.0, panel_w - 10.0, MARGIN + 10.0, HEIGHT - MARGIN);
        let bounds = finite_bounds(panel.values.iter().flatten().flatten()).unwrap_or((0.0, 1.0));
        let y = padded(bounds.0.min(0.0), bounds.1.max(0.0));
        axes(&mut out, panel.title, "", "", y, Area { x0, x1, top, bottom });
        let py = |v: f64| bottom - (bottom - top) * (v - y.0) / (y.1 - y.0);
        let group_w = (x1 - x0) / groups.len().max(1) as f64;
        let bar_w = 0.8 * group_w / series.len().max(1) as f64;
        for (g, name) in groups.iter().enumerate() {
            let gx = x0 + g as f64 * group_w + 0.1 * group_w;
            for (s, v) in panel.values.get(g).into_iter().flatten().enumerate() {
                let Some(v) = v.filter(|v| v.is_finite()) else { continue };
                let (a, b) = (py(v), py(0.0));
                let _ = writeln!(
                    out,
                    r#"<rect class="bar" x="{:.2}" y="{:.2}" width="{bar_w:.2}" height="{:.2}" fill="{}"/>"#,
                    gx + s as f64 * bar_w,
                    a.min(b),
                    (a - b).abs(),
                    PALETTE[s % PALETTE.len()]
                );
            }
            let _ = writeln!(out, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, gx + 0.4 * group_w, bottom + 16.0, escape(name));
        }
        for (s, name) in series.iter().enumerate() {
            let ly = top + 4.0 + 16.0 * s as f64;
            let _ = writeln!(out, r#"<rect x="{}" y="{ly}" width="10" height="10" fill="{}"/>"#, x1 - 110.0, PALETTE[s % PALETTE.len()]);
            let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, x1 - 96.0, ly + 9.0, escape(name));
        }
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimation_keeps_extremes_in_order() {
        let values: Vec<f64> = (0..10_000).map(|i| ((i * 7919) % 1000) as f64).collect();
        let pts = decimate(&values);
        assert!(pts.len() <= 2 * MAX_BUCKETS);
        assert!(pts.windows(2).all(|w| w[0].0 < w[1].0));
        let max = pts.iter().map(|p| p.1).fold(f64::MIN, f64::max);
        assert_eq!(max, 999.0);
    }

    #[test]
    fn markers_and_escaping() {
        let v = [1.0, 2.0, 3.0];
        let svg = line_chart(&LineChart {
            title: "a < b",
            x_label: "t",
            y_label: "y",
            x_range_labels: None,
            lines: vec![Line { name: "s", values: &v }],
            markers: &[1],
        });
        assert!(svg.contains("a &lt; b"));
        assert_eq!(svg.matches("class=\"changepoint\"").count(), 1);
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn bars_one_panel_per_metric() {
        let panels = ["MAE", "RMSE", "R2"].map(|t| BarPanel { title: t, values: vec![vec![Some(1.0), Some(-0.5)]] });
        let svg = grouped_bars("x", &["mlp".into()], &["baseline".into(), "drift_retrain".into()], &panels);
        assert_eq!(svg.matches("class=\"panel\"").count(), 3);
        assert_eq!(svg.matches("class=\"bar\"").count(), 6);
    }
}
