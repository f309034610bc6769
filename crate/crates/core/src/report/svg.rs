//! Minimal deterministic SVG charts: everything is rendered from the bundle
//! data with fixed layout constants, so identical inputs give identical bytes.

use super::SurfaceGrid;
use std::fmt::Write as _;

pub(crate) struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub points: Vec<(f64, f64)>,
}

pub(crate) fn fmt_num(v: f64) -> String {
    if !v.is_finite() {
        return "nan".into();
    }
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    let s = if !(1e-3..1e4).contains(&a) {
        format!("{v:.3e}")
    } else {
        format!("{v:.4}")
    };
    if s.contains('.') && !s.contains('e') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn range_of(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        // Degenerate span: pad so the single value sits mid-chart.
        return (lo - 1.0, hi + 1.0);
    }
    (lo, hi)
}

/// A line chart with optional log-scale y axis. Zero or negative values are
/// floored at 1e-16 before taking the log.
pub(crate) fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series<'_>],
    log_y: bool,
    width: f64,
    height: f64,
) -> String {
    const FLOOR: f64 = 1e-16;
    let (ml, mr, mt, mb) = (64.0, 14.0, 28.0, 40.0);
    let (pw, ph) = (width - ml - mr, height - mt - mb);

    let map_y = |v: f64| if log_y { v.max(FLOOR).log10() } else { v };
    let (x_lo, x_hi) = range_of(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y_lo, y_hi) = range_of(
        series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| map_y(p.1))),
    );

    let px = |x: f64| ml + (x - x_lo) / (x_hi - x_lo) * pw;
    let py = |y: f64| mt + ph - (map_y(y) - y_lo) / (y_hi - y_lo) * ph;

    let mut svg = String::new();
    let _ = write!(
        svg,
        r##"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width} {height}" width="{width}" height="{height}" role="img">"##
    );
    let _ = write!(
        svg,
        r##"<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>"##
    );
    let _ = write!(
        svg,
        r##"<text x="{ml:.1}" y="18" class="chart-title">{title}</text>"##
    );

    // Axes and ticks.
    let base = mt + ph;
    let right = ml + pw;
    let _ = write!(
        svg,
        r##"<line x1="{ml:.1}" y1="{base:.1}" x2="{right:.1}" y2="{base:.1}" stroke="#444" stroke-width="1"/>"##
    );
    let _ = write!(
        svg,
        r##"<line x1="{ml:.1}" y1="{mt:.1}" x2="{ml:.1}" y2="{base:.1}" stroke="#444" stroke-width="1"/>"##
    );
    for i in 0..=4 {
        let fx = x_lo + (x_hi - x_lo) * i as f64 / 4.0;
        let x = ml + pw * i as f64 / 4.0;
        let tick_y0 = base + 4.0;
        let label_y = base + 16.0;
        let label = fmt_num(fx);
        let _ = write!(
            svg,
            r##"<line x1="{x:.1}" y1="{base:.1}" x2="{x:.1}" y2="{tick_y0:.1}" stroke="#444" stroke-width="1"/><text x="{x:.1}" y="{label_y:.1}" class="tick" text-anchor="middle">{label}</text>"##
        );
        let fy = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        let y = base - ph * i as f64 / 4.0;
        let tick_x0 = ml - 4.0;
        let label_x = ml - 7.0;
        let label_yy = y + 3.5;
        let label = if log_y {
            format!("1e{fy:.1}")
        } else {
            fmt_num(fy)
        };
        let _ = write!(
            svg,
            r##"<line x1="{tick_x0:.1}" y1="{y:.1}" x2="{ml:.1}" y2="{y:.1}" stroke="#444" stroke-width="1"/><text x="{label_x:.1}" y="{label_yy:.1}" class="tick" text-anchor="end">{label}</text>"##
        );
    }
    let x_mid = ml + pw / 2.0;
    let x_label_y = height - 6.0;
    let y_mid = mt + ph / 2.0;
    let _ = write!(
        svg,
        r##"<text x="{x_mid:.1}" y="{x_label_y:.1}" class="axis" text-anchor="middle">{x_label}</text>"##
    );
    let _ = write!(
        svg,
        r##"<text x="14" y="{y_mid:.1}" class="axis" text-anchor="middle" transform="rotate(-90 14 {y_mid:.1})">{y_label}</text>"##
    );

    for s in series {
        if s.points.is_empty() {
            continue;
        }
        let mut path = String::new();
        for (k, &(x, y)) in s.points.iter().enumerate() {
            let _ = write!(
                path,
                "{}{:.2},{:.2}",
                if k == 0 { "" } else { " " },
                px(x),
                py(y)
            );
        }
        let color = s.color;
        let _ = write!(
            svg,
            r##"<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.4"/>"##
        );
    }

    // Legend.
    let mut lx = ml + 8.0;
    for s in series {
        let x1 = lx + 16.0;
        let tx = lx + 20.0;
        let ty = mt + 3.5;
        let (color, label) = (s.color, s.label);
        let _ = write!(
            svg,
            r##"<line x1="{lx:.1}" y1="{mt:.1}" x2="{x1:.1}" y2="{mt:.1}" stroke="{color}" stroke-width="2"/><text x="{tx:.1}" y="{ty:.1}" class="tick">{label}</text>"##
        );
        lx += 22.0 + 7.0 * s.label.len() as f64 + 16.0;
    }
    svg.push_str("</svg>");
    svg
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

fn height_color(t: f64) -> String {
    // Blue valley to warm ridge.
    let r = lerp(49.0, 247.0, t).round() as u8;
    let g = lerp(84.0, 205.0, t).round() as u8;
    let b = lerp(150.0, 80.0, t).round() as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Fixed-camera isometric projection of the candidate surface, painted
/// back to front.
pub(crate) fn surface_isometric(
    title: &str,
    grid: &SurfaceGrid,
    width: f64,
    height: f64,
) -> String {
    let res_e = grid.e.len();
    let res_d = grid.edot.len();
    let (v_lo, v_hi) = range_of(grid.v.iter().flat_map(|row| row.iter().copied()));
    let v_span = if v_hi > v_lo { v_hi - v_lo } else { 1.0 };

    // Unit-cube isometric projection, then scaled into the viewport.
    let cos30 = 3.0f64.sqrt() / 2.0;
    let sin30 = 0.5;
    let z_scale = 0.85;
    let project = |i: usize, j: usize| -> (f64, f64) {
        let x = i as f64 / (res_e - 1) as f64;
        let y = j as f64 / (res_d - 1) as f64;
        let z = (grid.v[i][j] - v_lo) / v_span * z_scale;
        ((x - y) * cos30, (x + y) * sin30 - z)
    };

    let mut u_lo = f64::INFINITY;
    let mut u_hi = f64::NEG_INFINITY;
    let mut w_lo = f64::INFINITY;
    let mut w_hi = f64::NEG_INFINITY;
    for i in 0..res_e {
        for j in 0..res_d {
            let (u, w) = project(i, j);
            u_lo = u_lo.min(u);
            u_hi = u_hi.max(u);
            w_lo = w_lo.min(w);
            w_hi = w_hi.max(w);
        }
    }
    let (ml, mt, pad_b) = (10.0, 30.0, 26.0);
    let sx = (width - 2.0 * ml) / (u_hi - u_lo);
    let sy = (height - mt - pad_b) / (w_hi - w_lo);
    let s = sx.min(sy);
    let to_px = |p: (f64, f64)| -> (f64, f64) {
        (
            ml + (p.0 - u_lo) * s + ((width - 2.0 * ml) - (u_hi - u_lo) * s) / 2.0,
            mt + (p.1 - w_lo) * s,
        )
    };

    let mut svg = String::new();
    let _ = write!(
        svg,
        r##"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width} {height}" width="{width}" height="{height}" role="img">"##
    );
    let _ = write!(
        svg,
        r##"<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>"##
    );
    let _ = write!(
        svg,
        r##"<text x="12" y="18" class="chart-title">{title}</text>"##
    );

    // Painter's order: cells farther from the camera (smaller i + j) first.
    let mut order: Vec<(usize, usize)> = (0..res_e - 1)
        .flat_map(|i| (0..res_d - 1).map(move |j| (i, j)))
        .collect();
    order.sort_by_key(|&(i, j)| (i + j, i));
    for (i, j) in order {
        let quad = [
            to_px(project(i, j)),
            to_px(project(i + 1, j)),
            to_px(project(i + 1, j + 1)),
            to_px(project(i, j + 1)),
        ];
        let mean_v =
            (grid.v[i][j] + grid.v[i + 1][j] + grid.v[i + 1][j + 1] + grid.v[i][j + 1]) / 4.0;
        let t = (mean_v - v_lo) / v_span;
        let mut pts = String::new();
        for (k, (x, y)) in quad.iter().enumerate() {
            let _ = write!(pts, "{}{x:.2},{y:.2}", if k == 0 { "" } else { " " });
        }
        let fill = height_color(t);
        let _ = write!(
            svg,
            r##"<polygon points="{pts}" fill="{fill}" stroke="#223344" stroke-width="0.3" stroke-opacity="0.45"/>"##
        );
    }

    let footer_y = height - 8.0;
    let _ = write!(
        svg,
        r##"<text x="12" y="{footer_y:.1}" class="tick">e in [{}, {}], e_dot in [{}, {}], V in [{}, {}]</text>"##,
        fmt_num(grid.e[0]),
        fmt_num(grid.e[res_e - 1]),
        fmt_num(grid.edot[0]),
        fmt_num(grid.edot[res_d - 1]),
        fmt_num(v_lo),
        fmt_num(v_hi)
    );
    svg.push_str("</svg>");
    svg
}
