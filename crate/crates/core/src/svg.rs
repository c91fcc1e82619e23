//! Minimal SVG figures: correlation heatmaps, scatter grids and the SER curve.
//!
//! Output is plain text with fixed number formatting, so identical inputs give
//! byte-identical files.

use std::fmt::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::Result;

const CELL: f64 = 48.0;
const MARGIN: f64 = 56.0;

fn header(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" \
         viewBox=\"0 0 {w:.0} {h:.0}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// White (0) to dark blue (1); values are clamped to [0, 1].
fn shade(v: f64) -> String {
    let t = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(255.0, 8.0), lerp(255.0, 48.0), lerp(255.0, 107.0))
}

/// Heatmap of a matrix with entries in [0, 1], each cell annotated.
pub fn heatmap(m: &DMatrix<f64>, rows: &[String], cols: &[String], title: &str) -> String {
    let (r, c) = m.shape();
    let w = 2.0 * MARGIN + CELL * c as f64;
    let h = 2.0 * MARGIN + CELL * r as f64;
    let mut s = header(w, h);
    let _ = writeln!(s, "<text x=\"{:.1}\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">{}</text>", w / 2.0, escape(title));
    for i in 0..r {
        let y = MARGIN + CELL * i as f64;
        if let Some(l) = rows.get(i) {
            let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>", MARGIN - 6.0, y + CELL / 2.0 + 4.0, escape(l));
        }
        for j in 0..c {
            let x = MARGIN + CELL * j as f64;
            let v = m[(i, j)];
            let ink = if v > 0.55 { "white" } else { "black" };
            let _ = writeln!(
                s,
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{CELL:.1}\" height=\"{CELL:.1}\" fill=\"{}\" stroke=\"#999\"/>\
                 <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" fill=\"{ink}\">{v:.2}</text>",
                shade(v),
                x + CELL / 2.0,
                y + CELL / 2.0 + 4.0,
            );
        }
    }
    for (j, l) in cols.iter().enumerate().take(c) {
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>", MARGIN + CELL * (j as f64 + 0.5), MARGIN + CELL * r as f64 + 16.0, escape(l));
    }
    s.push_str("</svg>\n");
    s
}

/// One panel of a scatter grid.
pub struct Panel<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub label: String,
}

fn range(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().filter(|x| x.is_finite()).fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().filter(|x| x.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Panels side by side; at most `max_points` evenly spaced points per panel.
pub fn scatter_grid(panels: &[Panel<'_>], title: &str, max_points: usize) -> String {
    let size = 180.0;
    let gap = 24.0;
    let w = gap + panels.len() as f64 * (size + gap);
    let h = size + 2.0 * MARGIN;
    let mut s = header(w.max(200.0), h);
    let _ = writeln!(s, "<text x=\"{:.1}\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">{}</text>", w.max(200.0) / 2.0, escape(title));
    for (k, p) in panels.iter().enumerate() {
        let x0 = gap + k as f64 * (size + gap);
        let y0 = MARGIN;
        let _ = writeln!(s, "<rect x=\"{x0:.1}\" y=\"{y0:.1}\" width=\"{size:.1}\" height=\"{size:.1}\" fill=\"none\" stroke=\"#444\"/>");
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>", x0 + size / 2.0, y0 + size + 16.0, escape(&p.label));
        let n = p.x.len().min(p.y.len());
        let (xl, xh) = range(&p.x[..n]);
        let (yl, yh) = range(&p.y[..n]);
        let step = n.div_ceil(max_points.max(1)).max(1);
        for i in (0..n).step_by(step) {
            let (vx, vy) = (p.x[i], p.y[i]);
            if !vx.is_finite() || !vy.is_finite() {
                continue;
            }
            let px = x0 + 4.0 + (size - 8.0) * (vx - xl) / (xh - xl);
            let py = y0 + size - 4.0 - (size - 8.0) * (vy - yl) / (yh - yl);
            let _ = writeln!(s, "<circle cx=\"{px:.1}\" cy=\"{py:.1}\" r=\"1.5\" fill=\"#08306b\" fill-opacity=\"0.5\"/>");
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Mean ± sd against log₁₀ of x.
pub fn line_chart(x: &[f64], mean: &[f64], sd: &[f64], title: &str, ylabel: &str) -> String {
    let (w, h) = (480.0, 320.0);
    let (pw, ph) = (w - 2.0 * MARGIN, h - 2.0 * MARGIN);
    let lx: Vec<f64> = x.iter().map(|v| v.max(f64::MIN_POSITIVE).log10()).collect();
    let (xl, xh) = range(&lx);
    let lo: Vec<f64> = mean.iter().zip(sd).map(|(m, s)| m - s).collect();
    let hi: Vec<f64> = mean.iter().zip(sd).map(|(m, s)| m + s).collect();
    let (yl, yh) = range(&[lo, hi].concat());
    let px = |v: f64| MARGIN + pw * (v - xl) / (xh - xl);
    let py = |v: f64| MARGIN + ph - ph * (v - yl) / (yh - yl);
    let mut s = header(w, h);
    let _ = writeln!(s, "<text x=\"{:.1}\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">{}</text>", w / 2.0, escape(title));
    let _ = writeln!(s, "<rect x=\"{MARGIN:.1}\" y=\"{MARGIN:.1}\" width=\"{pw:.1}\" height=\"{ph:.1}\" fill=\"none\" stroke=\"#444\"/>");
    let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">log10 SER</text>", w / 2.0, h - 12.0);
    let _ = writeln!(s, "<text x=\"14\" y=\"{:.1}\" transform=\"rotate(-90 14 {:.1})\" text-anchor=\"middle\">{}</text>", h / 2.0, h / 2.0, escape(ylabel));
    let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{yh:.3}</text>", MARGIN - 4.0, MARGIN + 4.0);
    let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{yl:.3}</text>", MARGIN - 4.0, MARGIN + ph);
    let mut path = String::new();
    for i in 0..lx.len() {
        let (cx, cy) = (px(lx[i]), py(mean[i]));
        let _ = write!(path, "{}{cx:.1},{cy:.1} ", if i == 0 { "M" } else { "L" });
        let _ = writeln!(s, "<line x1=\"{cx:.1}\" x2=\"{cx:.1}\" y1=\"{:.1}\" y2=\"{:.1}\" stroke=\"#6baed6\"/>", py(mean[i] - sd[i]), py(mean[i] + sd[i]));
        let _ = writeln!(s, "<circle cx=\"{cx:.1}\" cy=\"{cy:.1}\" r=\"3\" fill=\"#08306b\"/>");
        let _ = writeln!(s, "<text x=\"{cx:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"9\">{:.3}</text>", MARGIN + ph + 14.0, lx[i]);
    }
    let _ = writeln!(s, "<path d=\"{}\" fill=\"none\" stroke=\"#08306b\"/>", path.trim_end());
    s.push_str("</svg>\n");
    s
}

pub fn write(path: &Path, svg: &str) -> Result<()> {
    std::fs::write(path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_has_one_cell_per_entry() {
        let m = DMatrix::from_row_slice(2, 3, &[0.0, 0.5, 1.0, 0.2, 0.9, 0.1]);
        let s = heatmap(&m, &["a".into(), "b".into()], &["x".into(), "y".into(), "z".into()], "t");
        assert_eq!(s.matches("<rect x=").count(), 6);
        assert!(s.contains(">0.90<"));
        assert!(s.ends_with("</svg>\n"));
    }

    #[test]
    fn scatter_caps_points_and_skips_non_finite() {
        let x: Vec<f64> = (0..1000).map(f64::from).collect();
        let mut y = x.clone();
        y[0] = f64::NAN;
        let s = scatter_grid(&[Panel { x: &x, y: &y, label: "p".into() }], "t", 100);
        let n = s.matches("<circle").count();
        assert!((98..=100).contains(&n), "{n}");
    }

    #[test]
    fn output_is_deterministic_and_escaped() {
        let a = line_chart(&[1.0, 10.0, 1e6], &[0.5, 0.6, 0.9], &[0.1, 0.1, 0.0], "a<b", "MAC");
        let b = line_chart(&[1.0, 10.0, 1e6], &[0.5, 0.6, 0.9], &[0.1, 0.1, 0.0], "a<b", "MAC");
        assert_eq!(a, b);
        assert!(a.contains("a&lt;b"));
    }

    #[test]
    fn shade_endpoints() {
        assert_eq!(shade(0.0), "#ffffff");
        assert_eq!(shade(1.0), "#08306b");
        assert_eq!(shade(f64::NAN), "#ffffff");
    }
}
