//! Minimal SVG line charts and CSV heatmap dumps.

use std::fmt::Write;

use pcfm::fields::Grid1D;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 56.0;

/// Mean curve with a shaded ±std band over `xs`.
pub fn band_chart(title: &str, x_label: &str, y_label: &str, xs: &[f64], mean: &[f64], std: &[f64]) -> String {
    let lo: Vec<f64> = mean.iter().zip(std).map(|(m, s)| m - s).collect();
    let hi: Vec<f64> = mean.iter().zip(std).map(|(m, s)| m + s).collect();
    let (x0, x1) = bounds(xs);
    let (mut y0, mut y1) = bounds(&lo.iter().chain(&hi).cloned().collect::<Vec<_>>());
    if y1 - y0 < 1e-300 {
        y0 -= 1.0;
        y1 += 1.0;
    }
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0).max(1e-300) * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    // band: upper edge left to right, lower edge back
    let mut band = String::new();
    for (x, y) in xs.iter().zip(&hi) {
        let _ = write!(band, "{:.2},{:.2} ", px(*x), py(*y));
    }
    for (x, y) in xs.iter().zip(&lo).rev() {
        let _ = write!(band, "{:.2},{:.2} ", px(*x), py(*y));
    }
    let _ = writeln!(
        svg,
        r##"<polygon points="{}" fill="#4a78c2" fill-opacity="0.25" stroke="none"/>"##,
        band.trim_end()
    );
    let line: Vec<String> = xs
        .iter()
        .zip(mean)
        .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
        .collect();
    let _ = writeln!(
        svg,
        r##"<polyline points="{}" fill="none" stroke="#1f4e9c" stroke-width="2"/>"##,
        line.join(" ")
    );
    // axes and extreme tick labels
    let _ = writeln!(
        svg,
        r#"<path d="M{m},{t} V{b} H{r}" fill="none" stroke="black"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN
    );
    for (v, y) in [(y0, H - MARGIN), (y1, MARGIN)] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{y}" text-anchor="end" font-size="11">{v:.3e}</text>"#,
            MARGIN - 4.0
        );
    }
    for (v, x) in [(x0, MARGIN), (x1, W - MARGIN)] {
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{}" text-anchor="middle" font-size="11">{v:.3}</text>"#,
            H - MARGIN + 16.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{}</text>"#,
        W / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" font-size="13" transform="rotate(-90 16 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    svg.push_str("</svg>\n");
    svg
}

fn bounds(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo.is_finite() && hi.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One row per time level: `t` followed by the values at every `x`.
pub fn heatmap_csv(grid: &Grid1D, values: &[f64]) -> String {
    let mut out = String::from("t");
    for i in 0..grid.nx {
        let _ = write!(out, ",{:e}", grid.x(i));
    }
    out.push('\n');
    for j in 0..grid.nt {
        let _ = write!(out, "{:e}", grid.t(j));
        for v in &values[j * grid.nx..(j + 1) * grid.nx] {
            let _ = write!(out, ",{v:e}");
        }
        out.push('\n');
    }
    out
}
