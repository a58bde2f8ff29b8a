//! SVG plots of a trace: one file per panel, plain hand-written SVG.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::trace::{EventKind, Trace, TraceRecord};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 300.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 110.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 40.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    /// Piecewise constant, held until the next point.
    Step,
    Points,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

#[derive(Debug, Clone)]
pub struct Panel {
    /// File stem of the rendered SVG.
    pub name: &'static str,
    pub title: &'static str,
    pub y_label: &'static str,
    pub series: Vec<Series>,
}

fn series_of(
    records: &[TraceRecord],
    label: &str,
    style: Style,
    keep: impl Fn(&TraceRecord) -> bool,
    value: impl Fn(&TraceRecord) -> Option<f64>,
) -> Series {
    Series {
        label: label.to_string(),
        points: records
            .iter()
            .filter(|r| keep(r))
            .filter_map(|r| value(r).map(|v| (r.time, v)))
            .collect(),
        style,
    }
}

fn per_region(
    records: &[TraceRecord],
    m: usize,
    style: Style,
    pick: fn(&TraceRecord) -> &[f64],
) -> Vec<Series> {
    (0..m)
        .map(|k| {
            series_of(
                records,
                &format!("region {}", k + 1),
                style,
                |_| true,
                |r| Some(pick(r)[k]),
            )
        })
        .collect()
}

/// The panels worth drawing for this trace; human-factor panels only when
/// the trace carries those columns.
pub fn panels(trace: &Trace) -> Vec<Panel> {
    let recs = &trace.records;
    let m = trace.region_count();
    let mut out = vec![
        Panel {
            name: "allocation",
            title: "Duration allocated to each task",
            y_label: "allocation",
            series: vec![series_of(
                recs,
                "allocation",
                Style::Points,
                |r| r.event == EventKind::Allocate,
                |r| r.allocation,
            )],
        },
        Panel {
            name: "queue",
            title: "Queue length",
            y_label: "tasks",
            series: vec![series_of(
                recs,
                "queue",
                Style::Step,
                |_| true,
                |r| Some(r.queue_len as f64),
            )],
        },
        Panel {
            name: "cusum",
            title: "CUSUM statistics",
            y_label: "statistic",
            series: per_region(recs, m, Style::Step, |r| &r.statistics),
        },
        Panel {
            name: "routing",
            title: "Region selection probabilities",
            y_label: "probability",
            series: per_region(recs, m, Style::Step, |r| &r.routing),
        },
        Panel {
            name: "belief",
            title: "Operator belief of an anomaly",
            y_label: "belief",
            series: per_region(recs, m, Style::Step, |r| &r.beliefs),
        },
    ];
    let mut optional = vec![
        Panel {
            name: "utilization",
            title: "Operator utilization",
            y_label: "utilization",
            series: vec![series_of(
                recs,
                "utilization",
                Style::Line,
                |_| true,
                |r| r.utilization,
            )],
        },
        Panel {
            name: "motor",
            title: "Sensory-motor time",
            y_label: "time",
            series: vec![series_of(
                recs,
                "motor time",
                Style::Points,
                |_| true,
                |r| r.motor_time,
            )],
        },
        Panel {
            name: "rest",
            title: "Rest durations",
            y_label: "time",
            series: vec![series_of(
                recs,
                "rest",
                Style::Points,
                |r| r.event == EventKind::Rest,
                |r| r.rest,
            )],
        },
    ];
    if recs.iter().any(|r| r.utilization.is_some()) {
        out.append(&mut optional);
        out.push(Panel {
            name: "retained",
            title: "Retained belief",
            y_label: "belief",
            series: per_region(recs, m, Style::Step, |r| &r.retained),
        });
    }
    out
}

fn bounds(series: &[Series]) -> ((f64, f64), (f64, f64)) {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in pts {
        if x.is_finite() && y.is_finite() {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    if !x0.is_finite() {
        return ((0.0, 1.0), (0.0, 1.0));
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = 0.05 * (y1 - y0);
    ((x0, x1), (y0 - pad, y1 + pad))
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Renders a panel as a standalone SVG document.
pub fn render_svg(panel: &Panel) -> String {
    let ((x0, x1), (y0, y1)) = bounds(&panel.series);
    let pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let ph = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" font-size="13" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + pw / 2.0,
        panel.title
    );
    let _ = writeln!(
        s,
        r##"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(fx),
            HEIGHT - MARGIN_BOTTOM + 15.0,
            tick_label(fx)
        );
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN_LEFT}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/>"##,
            MARGIN_LEFT + pw,
            sy(fy),
            sy(fy)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 5.0,
            sy(fy) + 4.0,
            tick_label(fy)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">time</text>"#,
        MARGIN_LEFT + pw / 2.0,
        HEIGHT - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        MARGIN_TOP + ph / 2.0,
        MARGIN_TOP + ph / 2.0,
        panel.y_label
    );

    for (i, series) in panel.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        match series.style {
            Style::Points => {
                for &(x, y) in &series.points {
                    let _ = writeln!(
                        s,
                        r#"<circle cx="{:.1}" cy="{:.1}" r="2" fill="{color}"/>"#,
                        sx(x),
                        sy(y)
                    );
                }
            }
            Style::Line | Style::Step => {
                let mut d = String::new();
                let mut prev: Option<f64> = None;
                for &(x, y) in &series.points {
                    match prev {
                        None => {
                            let _ = write!(d, "M{:.1},{:.1}", sx(x), sy(y));
                        }
                        Some(py) if series.style == Style::Step => {
                            let _ = write!(
                                d,
                                " L{:.1},{:.1} L{:.1},{:.1}",
                                sx(x),
                                sy(py),
                                sx(x),
                                sy(y)
                            );
                        }
                        Some(_) => {
                            let _ = write!(d, " L{:.1},{:.1}", sx(x), sy(y));
                        }
                    }
                    prev = Some(y);
                }
                if !d.is_empty() {
                    let _ = writeln!(
                        s,
                        r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.2"/>"#
                    );
                }
            }
        }
        let ly = MARGIN_TOP + 12.0 + 16.0 * i as f64;
        let lx = WIDTH - MARGIN_RIGHT + 10.0;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{:.1}" width="10" height="10" fill="{color}"/><text x="{}" y="{:.1}">{}</text>"#,
            ly - 9.0,
            lx + 14.0,
            ly,
            series.label
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes one SVG per panel into `dir` and returns the paths written.
pub fn write_report(trace: &Trace, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for panel in panels(trace) {
        let path = dir.join(format!("{}.svg", panel.name));
        std::fs::write(&path, render_svg(&panel))?;
        written.push(path);
    }
    Ok(written)
}
