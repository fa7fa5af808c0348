use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalError, Result};

/// One embedded note.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionPoint {
    pub id: String,
    pub family: String,
    pub x: f64,
    pub y: f64,
    /// Encoder mean of the note.
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionMeta {
    pub perplexity: f64,
    pub seed: u64,
    pub checkpoint_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub points: Vec<ProjectionPoint>,
    pub meta: ProjectionMeta,
}

pub fn export_projection(projection: &Projection, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(projection)?)?;
    Ok(())
}

pub fn import_projection(path: impl AsRef<Path>) -> Result<Projection> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const PLOT: (f64, f64, f64, f64) = (60.0, 20.0, 600.0, 560.0);

fn family_color(i: usize, k: usize) -> String {
    let hue = 360.0 * i as f64 / k.max(1) as f64;
    format!("hsl({hue:.1},70%,45%)")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Axis range padded by 5 % of its span on each side.
fn padded(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let span = hi - lo;
    if span > 0.0 {
        (lo - 0.05 * span, hi + 0.05 * span)
    } else {
        (lo - 1.0, hi + 1.0)
    }
}

/// SVG scatter plot with one color per family and a legend.
pub fn scatter_svg(points: &[ProjectionPoint]) -> Result<String> {
    if points.is_empty() {
        return Err(EvalError::InvalidInput("nothing to plot".into()));
    }
    if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(EvalError::InvalidInput("non-finite coordinates".into()));
    }
    let mut families: Vec<&str> = points.iter().map(|p| p.family.as_str()).collect();
    families.sort_unstable();
    families.dedup();
    let (x0, x1) = padded(points.iter().map(|p| p.x));
    let (y0, y1) = padded(points.iter().map(|p| p.y));
    let (left, top, w, h) = PLOT;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * w;
    let sy = |y: f64| top + h - (y - y0) / (y1 - y0) * h;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{w}" height="{h}" fill="none" stroke="black"/>"#);
    for (v, anchor) in [(x0, "start"), (x1, "end")] {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="{anchor}">{v:.2}</text>"#,
            sx(v),
            top + h + 14.0
        );
    }
    for v in [y0, y1] {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{v:.2}</text>"#,
            left - 4.0,
            sy(v) + 4.0
        );
    }
    let _ = writeln!(s, r#"<g class="points">"#);
    for p in points {
        let fi = families.binary_search(&p.family.as_str()).unwrap_or(0);
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}" fill-opacity="0.8"><title>{}</title></circle>"#,
            sx(p.x),
            sy(p.y),
            family_color(fi, families.len()),
            escape(&p.id)
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g class="legend">"#);
    for (i, f) in families.iter().enumerate() {
        let y = top + 10.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{:.1}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{:.1}" font-size="12">{}</text>"#,
            left + w + 20.0,
            y,
            family_color(i, families.len()),
            left + w + 36.0,
            y + 9.0,
            escape(f)
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn render_scatter(points: &[ProjectionPoint], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, scatter_svg(points)?)?;
    Ok(())
}
