//! Minimal self-contained SVG line charts for the scalar time series.
//!
//! Plotting is best effort: failures are reported to stderr and never
//! affect the run outcome.

use std::path::Path;

const W: f64 = 640.0;
const H: f64 = 360.0;
const MARGIN: f64 = 48.0;

/// Writes a single-series line chart. Returns quietly on empty input.
pub fn write_line_chart(path: &Path, title: &str, series: &[(f64, f64)]) {
    if series.len() < 2 {
        return;
    }
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in series {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if !(x0.is_finite() && x1.is_finite() && y0.is_finite() && y1.is_finite()) {
        eprintln!("plot {}: non-finite data, skipped", path.display());
        return;
    }
    if (y1 - y0).abs() < 1e-300 {
        y0 -= 1.0;
        y1 += 1.0;
    }
    if (x1 - x0).abs() < 1e-300 {
        x1 = x0 + 1.0;
    }
    let sx = (W - 2.0 * MARGIN) / (x1 - x0);
    let sy = (H - 2.0 * MARGIN) / (y1 - y0);
    let mut points = String::new();
    for (x, y) in series {
        let px = MARGIN + (x - x0) * sx;
        let py = H - MARGIN - (y - y0) * sy;
        points.push_str(&format!("{px:.2},{py:.2} "));
    }
    let svg = format!(
        concat!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" "#,
            r#"viewBox="0 0 {w} {h}">"#,
            r#"<rect width="{w}" height="{h}" fill="white"/>"#,
            r#"<text x="{tx}" y="20" font-family="monospace" font-size="14">{title}</text>"#,
            r#"<line x1="{m}" y1="{ybase}" x2="{xend}" y2="{ybase}" stroke="black"/>"#,
            r#"<line x1="{m}" y1="{m}" x2="{m}" y2="{ybase}" stroke="black"/>"#,
            r#"<text x="{m}" y="{labely}" font-family="monospace" font-size="11">t in [{x0:.4}, {x1:.4}]</text>"#,
            r#"<text x="6" y="{m}" font-family="monospace" font-size="11">[{y0:.3e}, {y1:.3e}]</text>"#,
            r##"<polyline points="{points}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>"##,
            r#"</svg>"#,
        ),
        w = W,
        h = H,
        m = MARGIN,
        tx = MARGIN,
        title = title,
        ybase = H - MARGIN,
        xend = W - MARGIN,
        labely = H - MARGIN + 28.0,
        x0 = x0,
        x1 = x1,
        y0 = y0,
        y1 = y1,
        points = points,
    );
    if let Err(e) = std::fs::write(path, svg) {
        eprintln!("plot {}: {e}", path.display());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_valid_svg() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("series.svg");
        let series: Vec<(f64, f64)> = (0..50)
            .map(|i| (i as f64 * 0.1, (i as f64 * 0.3).sin()))
            .collect();
        write_line_chart(&path, "volume", &series);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("<svg"));
        assert!(text.contains("polyline"));
        assert!(text.ends_with("</svg>"));
    }

    #[test]
    fn short_series_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.svg");
        write_line_chart(&path, "empty", &[]);
        assert!(!path.exists());
    }
}
