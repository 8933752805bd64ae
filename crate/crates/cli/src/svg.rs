//! Hand-rolled SVG rendering: learning curves as axis-labeled polylines
//! and transfer matrices as colored cell grids. The emitted documents are
//! plain XML strings with every dynamic value escaped.

use prognet_core::TransferMatrix;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
        .replace('\'', "&apos;")
}

fn fmt_coord(v: f64) -> String {
    format!("{v:.2}")
}

// ── Learning curves ─────────────────────────────────────────────────────

const CURVE_W: f64 = 720.0;
const CURVE_H: f64 = 440.0;
const MARGIN_L: f64 = 72.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 52.0;

/// A learning curve as one polyline with exactly one vertex per point,
/// plus axes, ticks, and a title.
pub fn curve_svg(title: &str, points: &[(f64, f64)]) -> String {
    let (x_lo, x_hi) = padded_range(points.iter().map(|p| p.0), 0.0);
    let (y_lo, y_hi) = padded_range(points.iter().map(|p| p.1), 0.05);
    let plot_w = CURVE_W - MARGIN_L - MARGIN_R;
    let plot_h = CURVE_H - MARGIN_T - MARGIN_B;
    let x_of = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let y_of = |y: f64| MARGIN_T + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h;

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{CURVE_W}\" height=\"{CURVE_H}\" \
         viewBox=\"0 0 {CURVE_W} {CURVE_H}\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n");
    out.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" \
         text-anchor=\"middle\">{}</text>\n",
        CURVE_W / 2.0,
        esc(title)
    ));

    // Axes.
    let (x0, y0) = (MARGIN_L, MARGIN_T + plot_h);
    out.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{}\" y2=\"{y0}\" stroke=\"#444444\"/>\n",
        MARGIN_L + plot_w
    ));
    out.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{MARGIN_T}\" stroke=\"#444444\"/>\n"
    ));
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x_lo + f * (x_hi - x_lo);
        let yv = y_lo + f * (y_hi - y_lo);
        let xt = x_of(xv);
        let yt = y_of(yv);
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y0}\" x2=\"{}\" y2=\"{}\" stroke=\"#444444\"/>\n",
            fmt_coord(xt),
            fmt_coord(xt),
            y0 + 5.0
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"middle\">{}</text>\n",
            fmt_coord(xt),
            y0 + 19.0,
            esc(&format!("{xv:.0}"))
        ));
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{x0}\" y2=\"{}\" stroke=\"#444444\"/>\n",
            x0 - 5.0,
            fmt_coord(yt),
            fmt_coord(yt)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"end\">{}</text>\n",
            x0 - 9.0,
            fmt_coord(yt + 4.0),
            esc(&format!("{yv:.2}"))
        ));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\">agent steps</text>\n",
        MARGIN_L + plot_w / 2.0,
        CURVE_H - 14.0
    ));
    out.push_str(&format!(
        "<text x=\"18\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">mean score</text>\n",
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0
    ));

    let verts: Vec<String> = points
        .iter()
        .map(|&(x, y)| format!("{},{}", fmt_coord(x_of(x)), fmt_coord(y_of(y))))
        .collect();
    out.push_str(&format!(
        "<polyline fill=\"none\" stroke=\"#2c6fbb\" stroke-width=\"1.5\" points=\"{}\"/>\n",
        verts.join(" ")
    ));
    out.push_str("</svg>\n");
    out
}

/// Data range padded by `pad` of its span on both ends; degenerate ranges
/// widen to a unit so every divide stays finite.
fn padded_range(values: impl Iterator<Item = f64>, pad: f64) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 0.5, hi + 0.5);
    }
    let span = hi - lo;
    (lo - pad * span, hi + pad * span)
}

// ── Transfer matrices ───────────────────────────────────────────────────

const CELL_W: f64 = 80.0;
const CELL_H: f64 = 34.0;
const LABEL_W: f64 = 132.0;
const HEADER_H: f64 = 30.0;

/// Transfer matrix as a colored grid, sources down and targets across —
/// red below 100, white at parity, green above, gray for failed cells.
/// Cell text is clipped at `cap` the way the text renderer clips; stored
/// values are untouched.
pub fn matrix_svg(matrix: &TransferMatrix, cap: f64) -> String {
    let w = LABEL_W + CELL_W * matrix.targets.len() as f64 + 20.0;
    let h = HEADER_H + CELL_H * matrix.sources.len() as f64 + 20.0;
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n");
    for (c, target) in matrix.targets.iter().enumerate() {
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
             text-anchor=\"middle\">{}</text>\n",
            LABEL_W + (c as f64 + 0.5) * CELL_W,
            HEADER_H - 9.0,
            esc(target)
        ));
    }
    for (r, source) in matrix.sources.iter().enumerate() {
        let y = HEADER_H + r as f64 * CELL_H;
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
             text-anchor=\"end\">{}</text>\n",
            LABEL_W - 8.0,
            y + CELL_H / 2.0 + 4.0,
            esc(source)
        ));
        for (c, cell) in matrix.cells[r].iter().enumerate() {
            let x = LABEL_W + c as f64 * CELL_W;
            let (fill, label) = match cell {
                Some(v) => (score_color(*v), format!("{:.0}", v.min(cap))),
                None => ("#d0d0d0".to_string(), "—".to_string()),
            };
            out.push_str(&format!(
                "<rect x=\"{x}\" y=\"{y}\" width=\"{CELL_W}\" height=\"{CELL_H}\" \
                 fill=\"{fill}\" stroke=\"#888888\"/>\n"
            ));
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
                 text-anchor=\"middle\">{}</text>\n",
                x + CELL_W / 2.0,
                y + CELL_H / 2.0 + 4.0,
                esc(&label)
            ));
        }
    }
    out.push_str("</svg>\n");
    out
}

/// White at 100, saturating red toward 0 and green toward 200 and beyond.
fn score_color(score: f64) -> String {
    let t = ((score - 100.0) / 100.0).clamp(-1.0, 1.0);
    let (r, g, b) = if t < 0.0 {
        let u = -t;
        (255.0, 255.0 - u * (255.0 - 57.0), 255.0 - u * (255.0 - 43.0))
    } else {
        (255.0 - t * (255.0 - 46.0), 255.0 - t * (255.0 - 139.0), 255.0 - t * (255.0 - 87.0))
    };
    format!("#{:02x}{:02x}{:02x}", r as u8, g as u8, b as u8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polyline_has_one_vertex_per_point() {
        let points: Vec<(f64, f64)> = (0..7).map(|i| (i as f64 * 100.0, (i as f64).sin())).collect();
        let svg = curve_svg("demo", &points);
        let start = svg.find("points=\"").unwrap() + "points=\"".len();
        let end = svg[start..].find('"').unwrap() + start;
        assert_eq!(svg[start..end].split_whitespace().count(), 7);
    }

    #[test]
    fn titles_are_escaped() {
        let svg = curve_svg("a<b & \"c\"", &[(0.0, 0.0), (1.0, 1.0)]);
        assert!(svg.contains("a&lt;b &amp; &quot;c&quot;"));
        assert!(!svg.contains("a<b"));
    }

    #[test]
    fn flat_curves_still_render_finite_coordinates() {
        let svg = curve_svg("flat", &[(0.0, 0.5), (100.0, 0.5), (200.0, 0.5)]);
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }

    #[test]
    fn score_colors_hit_the_three_anchors() {
        assert_eq!(score_color(100.0), "#ffffff");
        assert_eq!(score_color(0.0), "#ff392b");
        assert_eq!(score_color(200.0), "#2e8b57");
        assert_eq!(score_color(1000.0), "#2e8b57");
    }

    #[test]
    fn matrices_render_failed_cells_gray() {
        let matrix = TransferMatrix {
            sources: vec!["base".into()],
            targets: vec!["noisy".into(), "zoom".into()],
            cells: vec![vec![Some(150.0), None]],
        };
        let svg = matrix_svg(&matrix, 200.0);
        assert!(svg.contains("#d0d0d0"));
        assert!(svg.contains(">150<"));
    }
}
