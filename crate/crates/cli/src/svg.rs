//! Minimal SVG figures drawn from the same data as the CSV output.

use std::fmt::Write;

use ddm_core::baselines::SamplingGrid;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 40.0;

fn header(out: &mut String, width: f64, height: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
}

fn legend(out: &mut String, items: &[(&str, &str)]) {
    for (i, (label, color)) in items.iter().enumerate() {
        let y = 16.0 + 16.0 * i as f64;
        let _ = writeln!(out, r#"<line x1="8" y1="{y}" x2="28" y2="{y}" stroke="{color}" stroke-width="2"/>"#);
        let _ = writeln!(out, r#"<text x="32" y="{:.1}" font-size="12" font-family="sans-serif">{label}</text>"#, y + 4.0);
    }
}

/// Closed curves on equal axes, e.g. exact and reconstructed boundaries.
pub fn boundaries(curves: &[(&str, &str, Vec<[f64; 2]>)]) -> String {
    let extent = curves
        .iter()
        .flat_map(|c| c.2.iter())
        .fold(0.5f64, |m, p| m.max(p[0].abs()).max(p[1].abs()))
        * 1.1;
    let scale = (SIZE / 2.0 - MARGIN) / extent;
    let c = SIZE / 2.0;
    let mut out = String::new();
    header(&mut out, SIZE, SIZE);
    let _ = writeln!(out, r##"<line x1="0" y1="{c}" x2="{SIZE}" y2="{c}" stroke="#ccc"/>"##);
    let _ = writeln!(out, r##"<line x1="{c}" y1="0" x2="{c}" y2="{SIZE}" stroke="#ccc"/>"##);
    for (_, color, pts) in curves {
        let path: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", c + scale * p[0], c - scale * p[1])).collect();
        let _ = writeln!(out, r#"<polygon points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, path.join(" "));
    }
    legend(&mut out, &curves.iter().map(|c| (c.0, c.1)).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Line chart with a logarithmic y axis; non-positive values are skipped.
pub fn log_chart(series: &[(&str, &str, Vec<(f64, f64)>)]) -> String {
    let pts = series.iter().flat_map(|s| s.2.iter()).filter(|p| p.1 > 0.0 && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y.log10());
        y1 = y1.max(y.log10());
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-9 {
        y1 = y0 + 1.0;
    }
    let (w, h) = (SIZE * 1.5, SIZE);
    let sx = |x: f64| MARGIN + (w - 2.0 * MARGIN) * (x - x0) / (x1 - x0);
    let sy = |y: f64| h - MARGIN - (h - 2.0 * MARGIN) * (y.log10() - y0) / (y1 - y0);
    let mut out = String::new();
    header(&mut out, w, h);
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - 2.0 * MARGIN,
        h - 2.0 * MARGIN
    );
    for decade in y0.floor() as i32..=y1.ceil() as i32 {
        let y = 10f64.powi(decade);
        if (y0..=y1).contains(&(decade as f64)) {
            let _ = writeln!(out, r#"<text x="2" y="{:.1}" font-size="10" font-family="sans-serif">1e{decade}</text>"#, sy(y) + 3.0);
        }
    }
    for (_, color, data) in series {
        let path: Vec<String> = data
            .iter()
            .filter(|p| p.1 > 0.0 && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, path.join(" "));
    }
    legend(&mut out, &series.iter().map(|s| (s.0, s.1)).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Grey-scale image of a sampling grid, brightest at the maximum.
pub fn heatmap(grid: &SamplingGrid) -> String {
    let max = grid.values.iter().fold(0.0f64, |m, v| m.max(*v));
    let cell = SIZE / grid.n as f64;
    let mut out = String::new();
    header(&mut out, SIZE, SIZE);
    for (idx, v) in grid.values.iter().enumerate() {
        let (i, j) = (idx % grid.n, idx / grid.n);
        let level = if max > 0.0 { (255.0 * v / max).round() as u8 } else { 0 };
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({level},{level},{level})"/>"#,
            i as f64 * cell,
            SIZE - (j + 1) as f64 * cell,
            cell + 0.05,
            cell + 0.05
        );
    }
    out.push_str("</svg>\n");
    out
}
