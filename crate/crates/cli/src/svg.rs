//! Scatter plot of 2-D vertex embeddings with confidence ellipses.

use std::fmt::Write;

use hyperlatent::ConfidenceEllipse;
use nalgebra::DMatrix;

const MARGIN: f64 = 40.0;
const BOUNDARY_POINTS: usize = 96;

struct Frame {
    lo: [f64; 2],
    scale: f64,
    size: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = [f64; 2]>, size: f64) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if !lo[0].is_finite() {
            lo = [-1.0, -1.0];
            hi = [1.0, 1.0];
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
        Self {
            lo,
            scale: (size - 2.0 * MARGIN) / span,
            size,
        }
    }

    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        (
            MARGIN + (p[0] - self.lo[0]) * self.scale,
            self.size - MARGIN - (p[1] - self.lo[1]) * self.scale,
        )
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// `z` is the `n x 2` embedding; `ellipses` pairs each region with its label.
pub fn render(z: &DMatrix<f64>, ellipses: &[(String, ConfidenceEllipse)], size: u32) -> String {
    let size_f = f64::from(size);
    let boundaries: Vec<Vec<[f64; 2]>> = ellipses
        .iter()
        .map(|(_, e)| e.boundary(BOUNDARY_POINTS))
        .collect();
    let points = z.row_iter().map(|r| [r[0], r[1]]);
    let frame = Frame::fit(points.chain(boundaries.iter().flatten().copied()), size_f);

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(s, "<!-- hyperlatent {} -->", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r##"<g fill="#9a9a9a" fill-opacity="0.6">"##);
    for r in z.row_iter() {
        let (x, y) = frame.map([r[0], r[1]]);
        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2"/>"#);
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r##"<g fill="none" stroke="#1f5fa8" stroke-width="1.2">"##
    );
    for b in &boundaries {
        let mut d = String::new();
        for (t, p) in b.iter().enumerate() {
            let (x, y) = frame.map(*p);
            let _ = write!(d, "{}{x:.2},{y:.2} ", if t == 0 { "M" } else { "L" });
        }
        let _ = writeln!(s, r#"<path d="{}Z"/>"#, d);
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r#"<g font-family="sans-serif" font-size="11" fill="black">"#
    );
    for (label, e) in ellipses {
        let (x, y) = frame.map(e.center);
        let _ = writeln!(
            s,
            r##"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="#c0392b"/>"##
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            x + 5.0,
            y - 5.0,
            escape(label)
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, "</svg>");
    s
}
