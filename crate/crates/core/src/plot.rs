//! SVG learning curves from metrics files.
//!
//! One panel per requested curve, every series overlaid in each panel, with
//! dashed vertical markers at the series' growth epochs. Output depends only
//! on the inputs, so it can be snapshot-tested.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{GrowError, Result};
use crate::harness::RunResult;

const WIDTH: f64 = 800.0;
const PANEL_HEIGHT: f64 = 240.0;
const LEGEND_HEIGHT: f64 = 30.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 28.0;
const MARGIN_BOTTOM: f64 = 36.0;
const TICKS: usize = 5;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Curve {
    TrainError,
    ValError,
    TestError,
    TrainLoss,
    Orl,
    Lr,
    Blocks,
    /// Gap between consecutive growth events, plotted at each event.
    Interval,
}

pub const CURVE_NAMES: [&str; 8] = [
    "train_error",
    "val_error",
    "test_error",
    "train_loss",
    "orl",
    "lr",
    "blocks",
    "interval",
];

impl FromStr for Curve {
    type Err = GrowError;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "train_error" => Self::TrainError,
            "val_error" => Self::ValError,
            "test_error" => Self::TestError,
            "train_loss" => Self::TrainLoss,
            "orl" => Self::Orl,
            "lr" => Self::Lr,
            "blocks" => Self::Blocks,
            "interval" => Self::Interval,
            _ => {
                return Err(GrowError::InvalidArgument(format!(
                    "unknown curve `{s}` (available: {})",
                    CURVE_NAMES.join(", ")
                )))
            }
        })
    }
}

impl fmt::Display for Curve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = match self {
            Self::TrainError => 0,
            Self::ValError => 1,
            Self::TestError => 2,
            Self::TrainLoss => 3,
            Self::Orl => 4,
            Self::Lr => 5,
            Self::Blocks => 6,
            Self::Interval => 7,
        };
        f.write_str(CURVE_NAMES[i])
    }
}

impl Curve {
    fn y_label(self) -> &'static str {
        match self {
            Self::TrainError | Self::ValError | Self::TestError => "error (%)",
            Self::TrainLoss => "loss",
            Self::Orl => "ORL (pp)",
            Self::Lr => "learning rate",
            Self::Blocks => "blocks",
            Self::Interval => "epochs",
        }
    }

    /// `(epoch, value)` points; `blocks` is drawn as a step function.
    pub fn points(self, run: &RunResult) -> Vec<(f64, f64)> {
        let per_epoch = |f: fn(&crate::harness::EpochMetrics) -> f64| -> Vec<(f64, f64)> {
            run.metrics.iter().map(|m| (m.epoch as f64, f(m))).collect()
        };
        match self {
            Self::TrainError => per_epoch(|m| 100.0 - m.train_acc),
            Self::ValError => per_epoch(|m| 100.0 - m.val_acc),
            Self::TestError => per_epoch(|m| 100.0 - m.test_acc),
            Self::TrainLoss => per_epoch(|m| m.train_loss),
            Self::Orl => per_epoch(|m| m.orl),
            Self::Lr => per_epoch(|m| m.lr),
            Self::Blocks => {
                let mut pts = Vec::new();
                let mut prev: Option<f64> = None;
                for m in &run.metrics {
                    let b = m.blocks.iter().sum::<usize>() as f64;
                    let x = m.epoch as f64;
                    if let Some(p) = prev.filter(|p| *p != b) {
                        pts.push((x, p));
                    }
                    pts.push((x, b));
                    prev = Some(b);
                }
                pts
            }
            Self::Interval => {
                let mut prev = 0;
                run.events
                    .iter()
                    .map(|e| {
                        let gap = e.epoch - prev;
                        prev = e.epoch;
                        (e.epoch as f64, gap as f64)
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub curves: Vec<Curve>,
    pub x_range: Option<(f64, f64)>,
    /// Applied to every panel when set.
    pub y_range: Option<(f64, f64)>,
    pub title: Option<String>,
}

impl Default for PlotSpec {
    fn default() -> Self {
        Self {
            curves: vec![Curve::TrainError, Curve::ValError, Curve::TestError],
            x_range: None,
            y_range: None,
            title: None,
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn fmt_tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else if a >= 100.0 || v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    }
}

fn range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() {
        return None;
    }
    if hi - lo < 1e-12 {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.05 };
        Some((lo - pad, hi + pad))
    } else {
        Some((lo, hi))
    }
}

fn check_range(name: &str, r: Option<(f64, f64)>) -> Result<()> {
    match r {
        Some((lo, hi)) if !(lo.is_finite() && hi.is_finite() && lo < hi) => Err(GrowError::InvalidArgument(
            format!("{name} range {lo}..{hi} is empty or not finite"),
        )),
        _ => Ok(()),
    }
}

/// Renders labelled runs as one SVG document.
pub fn render_svg(series: &[(String, RunResult)], spec: &PlotSpec) -> Result<String> {
    if series.is_empty() {
        return Err(GrowError::InvalidArgument("nothing to plot".into()));
    }
    if spec.curves.is_empty() {
        return Err(GrowError::InvalidArgument("no curves requested".into()));
    }
    check_range("x", spec.x_range)?;
    check_range("y", spec.y_range)?;
    for (label, run) in series {
        if run.metrics.is_empty() {
            return Err(GrowError::InvalidArgument(format!("{label}: metrics file has no epochs")));
        }
        if spec.curves.contains(&Curve::Interval) && run.events.is_empty() {
            return Err(GrowError::InvalidArgument(format!(
                "{label}: curve `interval` needs growth events, none recorded"
            )));
        }
    }

    let title_height = if spec.title.is_some() { 30.0 } else { 0.0 };
    let height = title_height + LEGEND_HEIGHT + PANEL_HEIGHT * spec.curves.len() as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {height}" width="{WIDTH}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{WIDTH}" height="{height}" fill="white"/>"#);
    if let Some(title) = &spec.title {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="16">{}</text>"#,
            WIDTH / 2.0,
            escape(title)
        );
    }

    // legend
    let legend_y = title_height + LEGEND_HEIGHT / 2.0;
    let _ = writeln!(svg, r#"<g class="legend">"#);
    for (i, (label, _)) in series.iter().enumerate() {
        let x = MARGIN_LEFT + 160.0 * i as f64;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            svg,
            r#"<line x1="{x}" y1="{legend_y}" x2="{}" y2="{legend_y}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            x + 20.0,
            x + 26.0,
            legend_y + 4.0,
            escape(label)
        );
    }
    let _ = writeln!(svg, "</g>");

    let x_range = spec.x_range.unwrap_or_else(|| {
        let last = series
            .iter()
            .map(|(_, r)| r.metrics.len() as f64)
            .fold(1.0, f64::max);
        (0.0, last)
    });
    for (p, curve) in spec.curves.iter().enumerate() {
        let all: Vec<Vec<(f64, f64)>> = series.iter().map(|(_, r)| curve.points(r)).collect();
        let y_range = spec
            .y_range
            .or_else(|| range(all.iter().flatten().map(|&(_, y)| y)))
            .expect("non-empty series");
        let top = title_height + LEGEND_HEIGHT + PANEL_HEIGHT * p as f64 + MARGIN_TOP;
        let bottom = top + PANEL_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let (left, right) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
        let sx = |x: f64| left + (x - x_range.0) / (x_range.1 - x_range.0) * (right - left);
        let sy = |y: f64| bottom - (y - y_range.0) / (y_range.1 - y_range.0) * (bottom - top);

        let _ = writeln!(svg, r#"<g class="panel" data-curve="{curve}">"#);
        let _ = writeln!(
            svg,
            r#"<text x="{left}" y="{:.1}" font-size="13">{curve}</text>"#,
            top - 8.0
        );
        let _ = writeln!(
            svg,
            r##"<rect x="{left}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#444"/>"##,
            right - left,
            bottom - top
        );
        for t in 0..=TICKS {
            let f = t as f64 / TICKS as f64;
            let xv = x_range.0 + f * (x_range.1 - x_range.0);
            let yv = y_range.0 + f * (y_range.1 - y_range.0);
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                sx(xv),
                bottom + 16.0,
                fmt_tick(xv),
                left - 6.0,
                sy(yv) + 4.0,
                fmt_tick(yv)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">epoch</text>"#,
            (left + right) / 2.0,
            bottom + 32.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
            (top + bottom) / 2.0,
            (top + bottom) / 2.0,
            curve.y_label()
        );
        let _ = writeln!(
            svg,
            r#"<clipPath id="clip{p}"><rect x="{left}" y="{top:.1}" width="{:.1}" height="{:.1}"/></clipPath>"#,
            right - left,
            bottom - top
        );
        let _ = writeln!(svg, r#"<g clip-path="url(#clip{p})">"#);
        for (i, ((_, run), pts)) in series.iter().zip(&all).enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            for e in &run.events {
                let x = sx(e.epoch as f64);
                let _ = writeln!(
                    svg,
                    r#"<line class="growth" x1="{x:.2}" y1="{top:.1}" x2="{x:.2}" y2="{bottom:.1}" stroke="{color}" stroke-opacity="0.35" stroke-dasharray="4 3"/>"#
                );
            }
            let coords: Vec<String> = pts
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline class="series" data-series="{i}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                coords.join(" ")
            );
        }
        let _ = writeln!(svg, "</g>");
        let _ = writeln!(svg, "</g>");
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_names_round_trip() {
        for name in CURVE_NAMES {
            assert_eq!(name.parse::<Curve>().unwrap().to_string(), name);
        }
        assert!("accuracy".parse::<Curve>().is_err());
    }

    #[test]
    fn tick_format() {
        assert_eq!(fmt_tick(0.0), "0");
        assert_eq!(fmt_tick(12.5), "12.5");
        assert_eq!(fmt_tick(0.1), "0.1");
        assert_eq!(fmt_tick(150.0), "150");
        assert_eq!(fmt_tick(1e-5), "1.00e-5");
    }

    #[test]
    fn escapes_markup() {
        assert_eq!(escape("a<b & \"c\""), "a&lt;b &amp; &quot;c&quot;");
    }
}
