//! Minimal standalone SVG charts.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>
"#,
        W / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, x_label: &str, y_label: &str) {
    let _ = write!(
        out,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>
<line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="black"/>
<text x="{cx}" y="{xl}" text-anchor="middle">{}</text>
<text x="16" y="{cy}" text-anchor="middle" transform="rotate(-90 16 {cy})">{}</text>
"#,
        escape(x_label),
        escape(y_label),
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN / 2.0,
        t = MARGIN / 1.5,
        cx = W / 2.0,
        xl = H - 18.0,
        cy = H / 2.0,
    );
}

fn range(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Scatter plot of `(x, y)` points.
pub fn scatter_svg(title: &str, x_label: &str, y_label: &str, xs: &[f64], ys: &[f64]) -> String {
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, x_label, y_label);
    let (x0, x1) = range(xs);
    let (y0, y1) = range(ys);
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 1.5 * MARGIN);
    let py = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - MARGIN - MARGIN / 1.5);
    for (v, anchor, x, y) in [
        (x0, "start", px(x0), H - MARGIN + 16.0),
        (x1, "end", px(x1), H - MARGIN + 16.0),
    ] {
        let _ = writeln!(out, r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}">{v:.3}</text>"#);
    }
    for v in [y0, y1] {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.3}</text>"#,
            MARGIN - 4.0,
            py(v) + 4.0
        );
    }
    for (&x, &y) in xs.iter().zip(ys) {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="steelblue" fill-opacity="0.75"/>"#,
            px(x),
            py(y)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Vertical bars in [0, 1], with an optional dashed reference level.
pub fn bar_chart_svg(title: &str, y_label: &str, labels: &[String], values: &[f64], reference: Option<f64>) -> String {
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, "", y_label);
    let plot_w = W - 1.5 * MARGIN;
    let plot_h = H - MARGIN - MARGIN / 1.5;
    let py = |v: f64| H - MARGIN - v.clamp(0.0, 1.0) * plot_h;
    for t in [0.0, 0.5, 1.0] {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{t:.1}</text>"#,
            MARGIN - 4.0,
            py(t) + 4.0
        );
    }
    let n = values.len().max(1) as f64;
    let slot = plot_w / n;
    for (i, (label, &v)) in labels.iter().zip(values).enumerate() {
        let x = MARGIN + i as f64 * slot + 0.15 * slot;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="steelblue"/>
<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.3}</text>
<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            py(v),
            0.7 * slot,
            H - MARGIN - py(v),
            x + 0.35 * slot,
            py(v) - 4.0,
            x + 0.35 * slot,
            H - MARGIN + 16.0,
            escape(label)
        );
    }
    if let Some(r) = reference {
        let _ = writeln!(
            out,
            r#"<line x1="{MARGIN}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="firebrick" stroke-dasharray="6 4"/>"#,
            W - MARGIN / 2.0,
            y = py(r)
        );
    }
    out.push_str("</svg>\n");
    out
}
