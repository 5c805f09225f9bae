//! Static SVG charts: line panels, QQ plots with envelopes, residual
//! densities and density heatmaps with observations.

use std::fmt::Write as _;
use std::path::Path;

use crate::bivar::DensityGrid;
use crate::fit_uni::{DensityPlot, QqPlot};
use crate::Result;

const W: f64 = 420.0;
const H: f64 = 300.0;
const ML: f64 = 58.0;
const MR: f64 = 14.0;
const MT: f64 = 28.0;
const MB: f64 = 44.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#555555"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    Dashed,
    Points,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

impl Trace {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>, style: Style) -> Self {
        Self {
            label: label.into(),
            points,
            style,
        }
    }
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit<'a>(pts: impl Iterator<Item = &'a (f64, f64)>) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts.filter(|(x, y)| x.is_finite() && y.is_finite()) {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        let pad = |a: f64, b: f64| {
            let d = if b > a { 0.04 * (b - a) } else { 0.5 * a.abs().max(1e-3) };
            (a - d, b + d)
        };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        ML + (x - self.x0) / (self.x1 - self.x0) * (W - ML - MR)
    }

    fn py(&self, y: f64) -> f64 {
        H - MB - (y - self.y0) / (self.y1 - self.y0) * (H - MT - MB)
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn ticks(a: f64, b: f64) -> Vec<f64> {
    let raw = (b - a) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(mag * 10.0);
    let mut t = (a / step).ceil() * step;
    let mut out = Vec::new();
    while t <= b + 1e-12 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn axes(svg: &mut String, f: &Frame, title: &str, xl: &str, yl: &str) {
    let _ = write!(
        svg,
        r##"<rect x="{ML}" y="{MT}" width="{}" height="{}" fill="none" stroke="#333"/>"##,
        W - ML - MR,
        H - MT - MB
    );
    for t in ticks(f.x0, f.x1) {
        let x = f.px(t);
        let _ = write!(
            svg,
            r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#333"/><text x="{x:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"##,
            H - MB,
            H - MB + 4.0,
            H - MB + 15.0,
            fmt_tick(t)
        );
    }
    for t in ticks(f.y0, f.y1) {
        let y = f.py(t);
        let _ = write!(
            svg,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{ML}" y2="{y:.1}" stroke="#333"/><text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{}</text>"##,
            ML - 4.0,
            ML - 6.0,
            y + 3.5,
            fmt_tick(t)
        );
    }
    let _ = write!(
        svg,
        r##"<text x="{:.1}" y="18" font-size="12" text-anchor="middle">{}</text><text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text><text x="14" y="{:.1}" font-size="11" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"##,
        W / 2.0,
        esc(title),
        (ML + W - MR) / 2.0,
        H - 8.0,
        esc(xl),
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0,
        esc(yl)
    );
}

fn fmt_tick(t: f64) -> String {
    let s = format!("{t:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn polyline(f: &Frame, pts: &[(f64, f64)], color: &str, dashed: bool) -> String {
    let mut d = String::new();
    for &(x, y) in pts.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
        let _ = write!(d, "{:.2},{:.2} ", f.px(x), f.py(y));
    }
    let dash = if dashed { r#" stroke-dasharray="5 3""# } else { "" };
    format!(r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#, d.trim_end())
}

fn dots(f: &Frame, pts: &[(f64, f64)], color: &str, r: f64) -> String {
    let mut s = String::new();
    for &(x, y) in pts.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
        let _ = write!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="{r}" fill="{color}"/>"#, f.px(x), f.py(y));
    }
    s
}

fn legend(svg: &mut String, traces: &[Trace]) {
    for (i, t) in traces.iter().enumerate() {
        let y = MT + 12.0 + 13.0 * i as f64;
        let c = PALETTE[i % PALETTE.len()];
        let _ = write!(
            svg,
            r#"<rect x="{:.1}" y="{:.1}" width="10" height="3" fill="{c}"/><text x="{:.1}" y="{:.1}" font-size="10">{}</text>"#,
            W - MR - 120.0,
            y - 4.0,
            W - MR - 106.0,
            y,
            esc(&t.label)
        );
    }
}

fn open() -> String {
    format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif">"#)
}

/// One panel with any mix of lines and point clouds.
pub fn chart(title: &str, x_label: &str, y_label: &str, traces: &[Trace]) -> String {
    let f = Frame::fit(traces.iter().flat_map(|t| t.points.iter()));
    let mut svg = open();
    axes(&mut svg, &f, title, x_label, y_label);
    for (i, t) in traces.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        svg.push_str(&match t.style {
            Style::Line => polyline(&f, &t.points, c, false),
            Style::Dashed => polyline(&f, &t.points, c, true),
            Style::Points => dots(&f, &t.points, c, 2.2),
        });
    }
    if traces.len() > 1 {
        legend(&mut svg, traces);
    }
    svg.push_str("</svg>");
    svg
}

/// Lays out panels produced by [`chart`] on a grid.
pub fn panels(charts: &[String], columns: usize) -> String {
    let cols = columns.max(1);
    let rows = charts.len().div_ceil(cols);
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif">"#,
        W * cols as f64,
        H * rows as f64
    );
    for (i, c) in charts.iter().enumerate() {
        let (x, y) = (W * (i % cols) as f64, H * (i / cols) as f64);
        let inner = c.replacen("<svg ", &format!(r#"<svg x="{x}" y="{y}" "#), 1);
        svg.push_str(&inner);
    }
    svg.push_str("</svg>");
    svg
}

/// Residual QQ plot with the simulated envelope and the identity line.
pub fn qq_svg(qq: &QqPlot, title: &str) -> String {
    let pts: Vec<(f64, f64)> = qq.theoretical.iter().copied().zip(qq.empirical.iter().copied()).collect();
    let lo: Vec<(f64, f64)> = qq.theoretical.iter().copied().zip(qq.lower.iter().copied()).collect();
    let hi: Vec<(f64, f64)> = qq.theoretical.iter().copied().zip(qq.upper.iter().copied()).collect();
    let (a, b) = (qq.theoretical.first().copied().unwrap_or(0.0), qq.theoretical.last().copied().unwrap_or(1.0));
    chart(
        title,
        "standard Gumbel quantile",
        "standardized residual",
        &[
            Trace::new("residuals", pts, Style::Points),
            Trace::new("envelope", lo, Style::Dashed),
            Trace::new("envelope", hi, Style::Dashed),
            Trace::new("identity", vec![(a, a), (b, b)], Style::Line),
        ],
    )
}

/// Histogram of residuals against the model density.
pub fn density_svg(d: &DensityPlot, title: &str) -> String {
    let width = if d.centers.len() > 1 { d.centers[1] - d.centers[0] } else { 1.0 };
    let mut hist = Vec::with_capacity(d.centers.len() * 4);
    for (c, h) in d.centers.iter().zip(&d.empirical) {
        hist.extend([(c - width / 2.0, 0.0), (c - width / 2.0, *h), (c + width / 2.0, *h), (c + width / 2.0, 0.0)]);
    }
    let model = d.centers.iter().copied().zip(d.model.iter().copied()).collect();
    chart(
        title,
        "standardized residual",
        "density",
        &[Trace::new("empirical", hist, Style::Line), Trace::new("model", model, Style::Line)],
    )
}

/// Heatmap of a gridded density with observations overlaid.
pub fn heatmap_svg(grid: &DensityGrid, observations: &[(f64, f64)], title: &str, x_label: &str, y_label: &str) -> String {
    let corners = [
        (grid.xs[0], grid.ys[0]),
        (*grid.xs.last().unwrap_or(&1.0), *grid.ys.last().unwrap_or(&1.0)),
    ];
    let f = Frame::fit(corners.iter().chain(observations));
    let zmax = grid.z.iter().flatten().copied().filter(|v| v.is_finite()).fold(0.0, f64::max).max(1e-300);
    let mut svg = open();
    let dx = if grid.xs.len() > 1 { grid.xs[1] - grid.xs[0] } else { 1.0 };
    let dy = if grid.ys.len() > 1 { grid.ys[1] - grid.ys[0] } else { 1.0 };
    for (j, row) in grid.z.iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            let level = (v / zmax).clamp(0.0, 1.0);
            if level < 0.01 {
                continue;
            }
            let (x, y) = (grid.xs[i], grid.ys[j]);
            let (px0, px1) = (f.px(x - dx / 2.0), f.px(x + dx / 2.0));
            let (py0, py1) = (f.py(y + dy / 2.0), f.py(y - dy / 2.0));
            let shade = (255.0 * (1.0 - level)).round() as u8;
            let _ = write!(
                svg,
                r#"<rect x="{px0:.2}" y="{py0:.2}" width="{:.2}" height="{:.2}" fill="rgb({shade},{shade},255)"/>"#,
                (px1 - px0).max(0.1),
                (py1 - py0).max(0.1)
            );
        }
    }
    axes(&mut svg, &f, title, x_label, y_label);
    svg.push_str(&dots(&f, observations, "#d62728", 1.8));
    svg.push_str("</svg>");
    svg
}

pub fn write_svg(path: impl AsRef<Path>, svg: &str) -> Result<()> {
    std::fs::write(path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_well_formed() {
        let svg = chart(
            "a & b",
            "x",
            "y",
            &[
                Trace::new("one", vec![(0.0, 1.0), (1.0, 2.0)], Style::Line),
                Trace::new("two", vec![(0.5, f64::NAN), (0.2, 1.5)], Style::Points),
            ],
        );
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>"));
        assert!(svg.contains("a &amp; b"));
        assert!(!svg.contains("NaN"));
        let grid = panels(&[svg.clone(), svg], 2);
        assert_eq!(grid.matches("<svg").count(), 3);
    }

    #[test]
    fn tick_steps_are_round() {
        assert_eq!(ticks(0.0, 1.0), vec![0.0, 0.2, 0.4, 0.6000000000000001, 0.8, 1.0]);
        assert_eq!(fmt_tick(0.6000000000000001), "0.6");
    }
}
