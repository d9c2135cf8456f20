//! Self-contained SVG figures.

use std::fmt::Write;

use crate::data::Point;

const W: f64 = 480.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>, equal_aspect: bool) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in points.filter(|(x, y)| x.is_finite() && y.is_finite()) {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        let grow = |a: &mut f64, b: &mut f64| {
            if *b - *a < 1e-9 {
                *a -= 0.5;
                *b += 0.5;
            }
        };
        grow(&mut x0, &mut x1);
        grow(&mut y0, &mut y1);
        if equal_aspect {
            let sx = (x1 - x0) / (W - 2.0 * PAD);
            let sy = (y1 - y0) / (H - 2.0 * PAD);
            let s = sx.max(sy);
            let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
            x0 = cx - s * (W - 2.0 * PAD) / 2.0;
            x1 = cx + s * (W - 2.0 * PAD) / 2.0;
            y0 = cy - s * (H - 2.0 * PAD) / 2.0;
            y1 = cy + s * (H - 2.0 * PAD) / 2.0;
        }
        Self { x0, x1, y0, y1 }
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        (
            PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD),
            H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD),
        )
    }

    fn polyline(&self, out: &mut String, pts: &[(f64, f64)], color: &str, width: f64, dash: bool) {
        let coords: Vec<String> = pts
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| {
                let (a, b) = self.map(*x, *y);
                format!("{a:.2},{b:.2}")
            })
            .collect();
        let dash = if dash { " stroke-dasharray=\"4 3\"" } else { "" };
        let _ = writeln!(
            out,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"{width}\"{dash} points=\"{}\"/>",
            coords.join(" ")
        );
    }
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"{}\" y=\"20\" text-anchor=\"middle\">{}</text>", W / 2.0, escape(title));
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Blue at `c = 0` through red at `c = 1`.
pub fn c_color(c: f64) -> String {
    let c = c.clamp(0.0, 1.0);
    format!("rgb({},{},{})", (255.0 * c) as u8, 40, (255.0 * (1.0 - c)) as u8)
}

fn axes(s: &mut String, f: &Frame, xlabel: &str, ylabel: &str) {
    let (l, b) = (PAD, H - PAD);
    let _ = writeln!(s, "<line x1=\"{l}\" y1=\"{b}\" x2=\"{}\" y2=\"{b}\" stroke=\"black\"/>", W - PAD);
    let _ = writeln!(s, "<line x1=\"{l}\" y1=\"{PAD}\" x2=\"{l}\" y2=\"{b}\" stroke=\"black\"/>");
    for (v, anchor, x, y) in [
        (f.x0, "start", l, b + 16.0),
        (f.x1, "end", W - PAD, b + 16.0),
    ] {
        let _ = writeln!(s, "<text x=\"{x}\" y=\"{y}\" text-anchor=\"{anchor}\">{v:.2}</text>");
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.2}</text>", l - 4.0, b, f.y0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.2}</text>", l - 4.0, PAD + 4.0, f.y1);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", W / 2.0, H - 10.0, escape(xlabel));
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{}</text>",
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
}

/// Line plot of one or more `(x, y)` series.
pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let f = Frame::fit(series.iter().flat_map(|(_, p)| p.iter().copied()), false);
    let mut s = header(title);
    axes(&mut s, &f, xlabel, ylabel);
    let n = series.len().max(2) - 1;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = c_color(i as f64 / n as f64);
        f.polyline(&mut s, pts, &color, 2.0, false);
        for (x, y) in pts {
            let (a, b) = f.map(*x, *y);
            let _ = writeln!(s, "<circle cx=\"{a:.2}\" cy=\"{b:.2}\" r=\"2.5\" fill=\"{color}\"/>");
        }
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>",
            W - PAD - 90.0,
            PAD + 14.0 * i as f64,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// History (black), ground truth (dashed, optional) and samples colored by
/// their condition value.
pub fn trajectory_overlay(title: &str, history: &[Point], truth: Option<&[Point]>, samples: &[(f64, Vec<Point>)]) -> String {
    let all = history
        .iter()
        .chain(truth.unwrap_or(&[]))
        .chain(samples.iter().flat_map(|(_, s)| s.iter()))
        .map(|p| (p[0], p[1]));
    let f = Frame::fit(all, true);
    let mut s = header(title);
    axes(&mut s, &f, "x (m)", "y (m)");
    let last = history.last().copied();
    for (c, pts) in samples {
        let line: Vec<(f64, f64)> = last.iter().chain(pts).map(|p| (p[0], p[1])).collect();
        f.polyline(&mut s, &line, &c_color(*c), 1.0, false);
    }
    let hist: Vec<(f64, f64)> = history.iter().map(|p| (p[0], p[1])).collect();
    f.polyline(&mut s, &hist, "black", 2.5, false);
    if let Some(t) = truth {
        let line: Vec<(f64, f64)> = last.iter().chain(t).map(|p| (p[0], p[1])).collect();
        f.polyline(&mut s, &line, "black", 2.0, true);
    }
    s.push_str("</svg>\n");
    s
}
