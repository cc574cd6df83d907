//! Static SVG scatter plots of 2-D projections.

use std::fmt::Write;

use fslhd::design::DesignMatrix;

const SIZE: f64 = 400.0;
const MARGIN: f64 = 20.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

/// Plot coordinates for a unit-cube value; `y` grows upwards.
fn px(v: f64) -> f64 {
    MARGIN + v * SIZE
}

fn py(v: f64) -> f64 {
    MARGIN + (1.0 - v) * SIZE
}

/// Scatter of dimensions `dx` and `dy` (0-based). Each slice gets its own
/// marker shape and colour. `grid = Some(g)` draws the interior lines of a
/// `g × g` grid.
pub fn render_svg(d: &DesignMatrix, dx: usize, dy: usize, grid: Option<usize>) -> String {
    let total = SIZE + 2.0 * MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}">"#
    );
    let _ = writeln!(
        s,
        r#"<rect class="frame" x="{MARGIN}" y="{MARGIN}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#
    );
    if let Some(g) = grid {
        for k in 1..g {
            let v = k as f64 / g as f64;
            let (x, y) = (px(v), py(v));
            let (lo, hi) = (MARGIN, MARGIN + SIZE);
            let _ = writeln!(
                s,
                r##"<line class="grid" x1="{x:.3}" y1="{lo}" x2="{x:.3}" y2="{hi}" stroke="#999" stroke-dasharray="4 3"/>"##
            );
            let _ = writeln!(
                s,
                r##"<line class="grid" x1="{lo}" y1="{y:.3}" x2="{hi}" y2="{y:.3}" stroke="#999" stroke-dasharray="4 3"/>"##
            );
        }
    }
    let spec = d.spec();
    for row in 0..spec.runs() {
        let slice = spec.slice_of_row(row).expect("row within spec");
        let (x, y) = (px(d.get(row, dx)), py(d.get(row, dy)));
        let color = COLORS[slice % COLORS.len()];
        let attrs = format!(
            r#"class="point" data-row="{}" data-slice="{}" fill="{color}""#,
            row + 1,
            slice + 1
        );
        let _ = match slice % 3 {
            0 => writeln!(s, r#"<circle {attrs} cx="{x:.3}" cy="{y:.3}" r="4"/>"#),
            1 => writeln!(
                s,
                r#"<rect {attrs} x="{:.3}" y="{:.3}" width="7" height="7"/>"#,
                x - 3.5,
                y - 3.5
            ),
            _ => writeln!(
                s,
                r#"<polygon {attrs} points="{:.3},{:.3} {:.3},{:.3} {:.3},{:.3}"/>"#,
                x,
                y - 4.5,
                x - 4.0,
                y + 3.5,
                x + 4.0,
                y + 3.5
            ),
        };
    }
    s.push_str("</svg>\n");
    s
}
