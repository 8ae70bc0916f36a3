//! Self-contained SVG line plots of a run.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::errors::{interpolate_truth, ErrorReport};
use super::log::TrajectoryLog;
use crate::error::{Error, Result};
use crate::sim::GroundTruthSample;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
/// Points kept per series; longer series are decimated by stride.
const MAX_POINTS: usize = 4000;

const TRUTH_COLOR: &str = "#222222";
const ESTIMATE_COLOR: &str = "#d62728";

pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub points: Vec<(f64, f64)>,
}

pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Same scale on both axes (top-down maps).
    pub equal_aspect: bool,
}

fn decimate(points: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    if points.len() <= MAX_POINTS {
        return points;
    }
    let stride = points.len().div_ceil(MAX_POINTS);
    let last = *points.last().expect("non-empty");
    let mut out: Vec<_> = points.into_iter().step_by(stride).collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

/// Round tick spacing (1, 2 or 5 times a power of ten) giving about `n` ticks.
fn tick_step(span: f64, n: f64) -> f64 {
    let raw = span / n;
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let nice = if f < 1.5 {
        1.0
    } else if f < 3.5 {
        2.0
    } else if f < 7.5 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick_label(v: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let s = format!("{v:.decimals$}");
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        "0".into()
    } else {
        s
    }
}

impl Plot {
    fn bounds(&self) -> (f64, f64, f64, f64) {
        let pts = self.series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            return (0.0, 1.0, 0.0, 1.0);
        }
        let pad = |lo: f64, hi: f64| {
            let span = hi - lo;
            let p = if span > 0.0 { 0.05 * span } else { 0.5f64.max(0.05 * lo.abs()) };
            (lo - p, hi + p)
        };
        let ((x0, x1), (y0, y1)) = (pad(x0, x1), pad(y0, y1));
        if !self.equal_aspect {
            return (x0, x1, y0, y1);
        }
        let (pw, ph) = (WIDTH - MARGIN_L - MARGIN_R, HEIGHT - MARGIN_T - MARGIN_B);
        let scale = ((x1 - x0) / pw).max((y1 - y0) / ph);
        let (cx, cy) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
        (cx - 0.5 * scale * pw, cx + 0.5 * scale * pw, cy - 0.5 * scale * ph, cy + 0.5 * scale * ph)
    }

    pub fn to_svg(&self) -> String {
        let (x0, x1, y0, y1) = self.bounds();
        let (pw, ph) = (WIDTH - MARGIN_L - MARGIN_R, HEIGHT - MARGIN_T - MARGIN_B);
        let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| MARGIN_T + (y1 - y) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );

        let _ = writeln!(s, r##"<g class="grid" stroke="#dddddd" stroke-width="1">"##);
        let mut labels = String::new();
        let xs = tick_step(x1 - x0, 8.0);
        let mut v = (x0 / xs).ceil() * xs;
        while v <= x1 {
            let px = sx(v);
            let _ = writeln!(s, r#"<line x1="{px:.2}" y1="{MARGIN_T}" x2="{px:.2}" y2="{:.2}"/>"#, MARGIN_T + ph);
            let _ = writeln!(
                labels,
                r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                MARGIN_T + ph + 16.0,
                tick_label(v, xs)
            );
            v += xs;
        }
        let ys = tick_step(y1 - y0, 6.0);
        let mut v = (y0 / ys).ceil() * ys;
        while v <= y1 {
            let py = sy(v);
            let _ = writeln!(s, r#"<line x1="{MARGIN_L}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}"/>"#, MARGIN_L + pw);
            let _ = writeln!(
                labels,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                MARGIN_L - 6.0,
                py + 4.0,
                tick_label(v, ys)
            );
            v += ys;
        }
        s.push_str("</g>\n");
        s.push_str(&labels);
        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            MARGIN_L + pw / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            MARGIN_T + ph / 2.0,
            MARGIN_T + ph / 2.0,
            escape(&self.y_label)
        );

        for (i, series) in self.series.iter().enumerate() {
            let mut pts = String::new();
            for &(x, y) in series.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
                let _ = write!(pts, "{:.2},{:.2} ", sx(x), sy(y));
            }
            let _ = writeln!(
                s,
                r#"<polyline class="series" data-label="{}" fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                escape(&series.label),
                series.color,
                pts.trim_end()
            );
            let ly = MARGIN_T + 14.0 + 16.0 * i as f64;
            let lx = MARGIN_L + pw - 130.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="2"/><text x="{:.2}" y="{ly:.2}">{}</text>"#,
                ly - 4.0,
                lx + 20.0,
                ly - 4.0,
                series.color,
                lx + 26.0,
                escape(&series.label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn write_svg(path: &Path, plot: &Plot) -> Result<()> {
    fs::write(path, plot.to_svg()).map_err(|e| Error::io(path, e))
}

/// Writes `trajectory.svg`, `heading.svg` and `pos_error.svg` into `out_dir`.
pub fn render_plots(
    report: &ErrorReport,
    log: &TrajectoryLog,
    truth: &[GroundTruthSample],
    out_dir: &Path,
) -> Result<()> {
    if log.is_empty() {
        return Err(Error::invalid("cannot plot an empty log"));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (ls, le) = (log.start().expect("non-empty").secs(), log.end().expect("non-empty").secs());
    let truth_span: Vec<&GroundTruthSample> = truth
        .iter()
        .filter(|g| (ls..=le).contains(&g.timestamp.secs()))
        .collect();

    let estimate = |label: &str, points| Series {
        label: label.into(),
        color: ESTIMATE_COLOR,
        points: decimate(points),
    };
    let reference = |points| Series {
        label: "truth".into(),
        color: TRUTH_COLOR,
        points: decimate(points),
    };

    write_svg(
        &out_dir.join("trajectory.svg"),
        &Plot {
            title: "Top-down trajectory".into(),
            x_label: "x [m]".into(),
            y_label: "y [m]".into(),
            series: vec![
                reference(truth_span.iter().map(|g| (g.state.x, g.state.y)).collect()),
                estimate("estimate", log.records.iter().map(|r| (r.state.x, r.state.y)).collect()),
            ],
            equal_aspect: true,
        },
    )?;

    // Heading is plotted unwrapped so turns through ±180° stay continuous.
    let unwrap = |it: &mut dyn Iterator<Item = (f64, f64)>| {
        let mut out: Vec<(f64, f64)> = Vec::new();
        let mut offset = 0.0;
        for (t, psi) in it {
            if let Some(&(_, prev)) = out.last() {
                let d = psi + offset - prev;
                offset -= (d / std::f64::consts::TAU).round() * std::f64::consts::TAU;
            }
            out.push((t, psi + offset));
        }
        out.into_iter().map(|(t, p)| (t, p.to_degrees())).collect::<Vec<_>>()
    };
    let mut truth_heading = truth_span.iter().map(|g| (g.timestamp.secs(), g.state.psi));
    let mut est_heading = log.records.iter().map(|r| (r.timestamp.secs(), r.state.psi));
    write_svg(
        &out_dir.join("heading.svg"),
        &Plot {
            title: "Heading".into(),
            x_label: "t [s]".into(),
            y_label: "heading [deg]".into(),
            series: vec![reference(unwrap(&mut truth_heading)), estimate("estimate", unwrap(&mut est_heading))],
            equal_aspect: false,
        },
    )?;

    let errors: Vec<(f64, f64)> = if report.samples.len() == log.len() {
        report.samples.iter().map(|s| (s.t, s.err_pos)).collect()
    } else {
        log.records
            .iter()
            .map(|r| {
                let t = r.timestamp.secs();
                let (x, y, _) = interpolate_truth(truth, t)?;
                Ok((t, (r.state.x - x).hypot(r.state.y - y)))
            })
            .collect::<Result<_>>()?
    };
    write_svg(
        &out_dir.join("pos_error.svg"),
        &Plot {
            title: format!("Position error (RMSE {:.3} m)", report.position_rmse),
            x_label: "t [s]".into(),
            y_label: "error [m]".into(),
            series: vec![estimate("position error", errors)],
            equal_aspect: false,
        },
    )
}
