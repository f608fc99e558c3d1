//! Minimal static line plots: a mean curve with a ±std band.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// `points` are `(x, mean, std)`, sorted by `x`.
pub fn band_plot(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64, f64)]) -> String {
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    )
    .unwrap();

    let finite: Vec<_> = points.iter().filter(|p| p.0.is_finite() && p.1.is_finite() && p.2.is_finite()).collect();
    if !finite.is_empty() {
        let x_lo = finite.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let mut x_hi = finite.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let mut y_lo = finite.iter().map(|p| p.1 - p.2).fold(f64::INFINITY, f64::min);
        let mut y_hi = finite.iter().map(|p| p.1 + p.2).fold(f64::NEG_INFINITY, f64::max);
        if x_hi <= x_lo {
            x_hi = x_lo + 1.0;
        }
        if y_hi <= y_lo {
            y_lo -= 0.5;
            y_hi += 0.5;
        }
        let sx = |x: f64| MARGIN + (x - x_lo) / (x_hi - x_lo) * (WIDTH - 2.0 * MARGIN);
        let sy = |y: f64| HEIGHT - MARGIN - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - 2.0 * MARGIN);

        let mut band = String::new();
        for p in &finite {
            write!(band, "{:.2},{:.2} ", sx(p.0), sy(p.1 + p.2)).unwrap();
        }
        for p in finite.iter().rev() {
            write!(band, "{:.2},{:.2} ", sx(p.0), sy(p.1 - p.2)).unwrap();
        }
        writeln!(svg, r#"<polygon points="{}" fill="steelblue" fill-opacity="0.25" stroke="none"/>"#, band.trim_end()).unwrap();
        let line: Vec<String> = finite.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
        writeln!(svg, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, line.join(" ")).unwrap();

        let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
        writeln!(
            svg,
            r#"<path d="M{left},{top} L{left},{bottom} L{right},{bottom}" fill="none" stroke="black"/>"#
        )
        .unwrap();
        let label = |svg: &mut String, x: f64, y: f64, anchor: &str, text: &str| {
            writeln!(
                svg,
                r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}" font-family="sans-serif" font-size="11">{}</text>"#,
                escape(text)
            )
            .unwrap();
        };
        label(&mut svg, left, bottom + 16.0, "middle", &fmt_tick(x_lo));
        label(&mut svg, right, bottom + 16.0, "middle", &fmt_tick(x_hi));
        label(&mut svg, left - 6.0, bottom, "end", &fmt_tick(y_lo));
        label(&mut svg, left - 6.0, top + 4.0, "end", &fmt_tick(y_hi));
        label(&mut svg, WIDTH / 2.0, HEIGHT - 16.0, "middle", x_label);
        writeln!(
            svg,
            r#"<text x="16" y="{:.2}" transform="rotate(-90 16 {:.2})" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(y_label)
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}
