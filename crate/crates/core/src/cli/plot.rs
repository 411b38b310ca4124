//! Minimal SVG line chart.

use std::fmt::Write;

pub struct PlotSeries {
    pub t: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// `(t, u)` pairs.
    pub truth: Option<Vec<(f64, f64)>>,
    pub title: String,
}

const W: f64 = 640.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;

fn path(points: impl Iterator<Item = (f64, f64)>) -> String {
    let mut d = String::new();
    for (i, (x, y)) in points.enumerate() {
        let _ = write!(d, "{}{x:.2},{y:.2} ", if i == 0 { "M" } else { "L" });
    }
    d.trim_end().to_string()
}

/// Mean line, shaded `mean ± 2σ` band and dashed truth. No timestamps, so
/// identical inputs give identical bytes.
pub fn render_svg(s: &PlotSeries) -> String {
    let lo: Vec<f64> = s.mean.iter().zip(&s.std).map(|(m, d)| m - 2.0 * d).collect();
    let hi: Vec<f64> = s.mean.iter().zip(&s.std).map(|(m, d)| m + 2.0 * d).collect();
    let truth = s.truth.as_deref().unwrap_or(&[]);
    let all_t = s.t.iter().chain(truth.iter().map(|p| &p.0));
    let (t0, t1) = all_t.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), t| (a.min(*t), b.max(*t)));
    let all_u = lo.iter().chain(&hi).chain(truth.iter().map(|p| &p.1));
    let (mut u0, mut u1) = all_u.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), u| (a.min(*u), b.max(*u)));
    if !(u1 > u0) {
        u0 -= 1.0;
        u1 += 1.0;
    }
    let span_t = if t1 > t0 { t1 - t0 } else { 1.0 };
    let sx = |t: f64| PAD + (t - t0) / span_t * (W - 2.0 * PAD);
    let sy = |u: f64| H - PAD - (u - u0) / (u1 - u0) * (H - 2.0 * PAD);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        W / 2.0,
        s.title
    );
    let band = path(
        s.t.iter()
            .zip(&hi)
            .map(|(t, u)| (sx(*t), sy(*u)))
            .chain(s.t.iter().zip(&lo).rev().map(|(t, u)| (sx(*t), sy(*u)))),
    );
    let _ = writeln!(out, r##"<path d="{band} Z" fill="#9ecae1" fill-opacity="0.5" stroke="none"/>"##);
    let mean = path(s.t.iter().zip(&s.mean).map(|(t, u)| (sx(*t), sy(*u))));
    let _ = writeln!(out, r##"<path d="{mean}" fill="none" stroke="#08519c" stroke-width="2"/>"##);
    if !truth.is_empty() {
        let d = path(truth.iter().map(|(t, u)| (sx(*t), sy(*u))));
        let _ = writeln!(
            out,
            r##"<path d="{d}" fill="none" stroke="#d62728" stroke-width="1.5" stroke-dasharray="6 3"/>"##
        );
    }
    let (x0, x1, y0, y1) = (PAD, W - PAD, H - PAD, PAD);
    let _ = writeln!(out, r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" fill="none" stroke="black"/>"#);
    for (v, y) in [(u0, y0), (u1, y1)] {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{y}" font-family="sans-serif" font-size="11" text-anchor="end">{v:.3}</text>"#,
            x0 - 4.0
        );
    }
    for (v, x) in [(t0, x0), (t1, x1)] {
        let _ = writeln!(
            out,
            r#"<text x="{x}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{v:.3}</text>"#,
            y0 + 16.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">t (s)</text>"#,
        W / 2.0,
        H - 8.0
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">u (m/s)</text>"#,
        H / 2.0,
        H / 2.0
    );
    out.push_str("</svg>\n");
    out
}
