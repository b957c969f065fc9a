//! Hand-emitted SVG line plots for metrics series; no plotting dependency.

use std::fmt::Write;

const COLORS: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const W: f64 = 800.0;
const H: f64 = 400.0;
const MARGIN: f64 = 55.0;

/// Renders one polyline per named series into a fixed-viewport SVG.
pub fn render_svg(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for (_, pts) in series {
        for &(x, y) in pts {
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
    }
    if !xmin.is_finite() {
        xmin = 0.0;
        xmax = 1.0;
        ymin = 0.0;
        ymax = 1.0;
    }
    if (xmax - xmin).abs() < 1e-12 {
        xmax = xmin + 1.0;
    }
    if (ymax - ymin).abs() < 1e-12 {
        ymax = ymin + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - xmin) / (xmax - xmin) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - ymin) / (ymax - ymin) * (H - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"24\" font-family=\"monospace\" font-size=\"15\" text-anchor=\"middle\">{}</text>",
        W / 2.0,
        escape(title)
    );
    // axes
    let _ = writeln!(
        svg,
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"#333\"/><line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"#333\"/>",
        m = MARGIN,
        r = W - MARGIN,
        t = MARGIN,
        b = H - MARGIN
    );
    for (label, x, y, anchor) in [
        (format!("{xmin:.4}"), MARGIN, H - MARGIN + 18.0, "middle"),
        (format!("{xmax:.4}"), W - MARGIN, H - MARGIN + 18.0, "middle"),
        (format!("{ymin:.4}"), MARGIN - 6.0, H - MARGIN, "end"),
        (format!("{ymax:.4}"), MARGIN - 6.0, MARGIN + 4.0, "end"),
    ] {
        let _ = writeln!(
            svg,
            "<text x=\"{x}\" y=\"{y}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"{anchor}\">{label}</text>"
        );
    }
    for (idx, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[idx % COLORS.len()];
        if !pts.is_empty() {
            let mut d = String::new();
            for &(x, y) in pts {
                let _ = write!(d, "{:.2},{:.2} ", sx(x), sy(y));
            }
            let _ = writeln!(
                svg,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
                d.trim_end()
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" fill=\"{color}\">{}</text>",
            W - MARGIN + 6.0 - 160.0,
            MARGIN + 16.0 * idx as f64 + 4.0,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_polyline_per_series() {
        let series = vec![
            ("return".to_string(), vec![(0.0, -100.0), (1.0, -50.0), (2.0, -20.0)]),
            ("sr".to_string(), vec![(0.0, 0.0), (2.0, 1.0)]),
        ];
        let svg = render_svg("demo", &series);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("return"));
        assert!(svg.contains("</svg>"));
    }

    #[test]
    fn empty_input_still_valid() {
        let svg = render_svg("empty", &[]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("</svg>"));
    }
}
