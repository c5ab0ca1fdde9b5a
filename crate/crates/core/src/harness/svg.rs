//! Minimal static SVG line plots with a logarithmic y axis.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;

/// Renders `(x, y)` points as a polyline on a log10 y axis. Nonpositive or
/// non-finite values are skipped; an empty series gives a frame only.
pub fn log_plot(title: &str, x_label: &str, points: &[(f64, f64)]) -> String {
    let kept: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(x, y)| x.is_finite() && y.is_finite() && y > 0.0)
        .map(|(x, y)| (x, y.log10()))
        .collect();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (x0, x1) = (MARGIN, WIDTH - MARGIN / 2.0);
    let (y0, y1) = (HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(
        svg,
        r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 16.0,
        escape(x_label)
    );
    if !kept.is_empty() {
        let (xmin, xmax) = bounds(kept.iter().map(|p| p.0));
        let (ymin, ymax) = bounds(kept.iter().map(|p| p.1));
        let (ylo, yhi) = (ymin.floor(), ymax.ceil().max(ymin.floor() + 1.0));
        let sx = |x: f64| x0 + (x - xmin) / (xmax - xmin).max(f64::MIN_POSITIVE) * (x1 - x0);
        let sy = |y: f64| y0 - (y - ylo) / (yhi - ylo) * (y0 - y1);
        let mut decade = ylo;
        while decade <= yhi {
            let y = sy(decade);
            let _ = writeln!(
                svg,
                r##"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="11">1e{}</text>"##,
                x0 - 4.0,
                y + 4.0,
                decade as i64
            );
            decade += ((yhi - ylo) / 8.0).ceil().max(1.0);
        }
        for (x, anchor) in [(xmin, "start"), (xmax, "end")] {
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{}" text-anchor="{anchor}" font-family="sans-serif" font-size="11">{x}</text>"#,
                sx(x),
                y0 + 16.0
            );
        }
        let path: Vec<String> = kept.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            svg,
            r##"<polyline points="{}" fill="none" stroke="#1f5fa8" stroke-width="1.5"/>"##,
            path.join(" ")
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
