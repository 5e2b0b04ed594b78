//! Minimal static SVG 1.1 output: line plots with shaded bands and a
//! coverage heatmap. Everything drawn here is also emitted as CSV.

use std::fmt::Write as _;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 48.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stroke {
    Solid,
    LongDash,
    Dash,
    DotDash,
}

impl Stroke {
    fn dasharray(self) -> &'static str {
        match self {
            Stroke::Solid => "",
            Stroke::LongDash => " stroke-dasharray=\"10,4\"",
            Stroke::Dash => " stroke-dasharray=\"4,3\"",
            Stroke::DotDash => " stroke-dasharray=\"1,3,6,3\"",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub stroke: Stroke,
}

fn bounds<'a>(pts: impl Iterator<Item = &'a (f64, f64)>) -> Option<[f64; 4]> {
    let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    let mut any = false;
    for &(x, y) in pts {
        if !(x.is_finite() && y.is_finite()) {
            continue;
        }
        any = true;
        b[0] = b[0].min(x);
        b[1] = b[1].max(x);
        b[2] = b[2].min(y);
        b[3] = b[3].max(y);
    }
    if !any {
        return None;
    }
    if b[1] == b[0] {
        b[0] -= 0.5;
        b[1] += 0.5;
    }
    if b[3] == b[2] {
        b[2] -= 0.5;
        b[3] += 0.5;
    }
    Some(b)
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{}</text>",
        WIDTH / 2.0,
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(out: &mut String, b: [f64; 4], x_label: &str, y_label: &str) {
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN / 2.0, MARGIN / 1.5);
    let _ = writeln!(
        out,
        "<path d=\"M{x0},{y1} L{x0},{y0} L{x1},{y0}\" fill=\"none\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        out,
        "<text x=\"{x0}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">{:.3}</text>\
         <text x=\"{x1}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{:.3}</text>",
        y0 + 14.0,
        b[0],
        y0 + 14.0,
        b[1]
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{y0}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{:.3}</text>\
         <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{:.3}</text>",
        x0 - 4.0,
        b[2],
        x0 - 4.0,
        y1 + 8.0,
        b[3]
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>\
         <text x=\"12\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\" transform=\"rotate(-90 12 {})\">{}</text>",
        (x0 + x1) / 2.0,
        HEIGHT - 10.0,
        escape(x_label),
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn project(b: [f64; 4], x: f64, y: f64) -> (f64, f64) {
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN / 2.0, MARGIN / 1.5);
    (
        x0 + (x - b[0]) / (b[1] - b[0]) * (x1 - x0),
        y0 - (y - b[2]) / (b[3] - b[2]) * (y0 - y1),
    )
}

/// Line plot; non-finite points break the line.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let Some(b) = bounds(series.iter().flat_map(|s| s.points.iter())) else {
        out.push_str("</svg>\n");
        return out;
    };
    axes(&mut out, b, x_label, y_label);
    for (i, s) in series.iter().enumerate() {
        let mut d = String::new();
        let mut pen_down = false;
        for &(x, y) in &s.points {
            if !(x.is_finite() && y.is_finite()) {
                pen_down = false;
                continue;
            }
            let (px, py) = project(b, x, y);
            let _ = write!(d, "{}{px:.2},{py:.2} ", if pen_down { "L" } else { "M" });
            pen_down = true;
        }
        let _ = writeln!(
            out,
            "<path d=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"1.2\"{}><title>{}</title></path>",
            d.trim_end(),
            s.stroke.dasharray(),
            escape(&s.label)
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"9\">{}</text>",
            WIDTH - MARGIN * 2.5,
            MARGIN + 12.0 * i as f64,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Heatmap of `(x, y, value)` cells with values in `[0, 1]`; `None` cells
/// are drawn hatched grey.
pub fn heatmap(title: &str, x_label: &str, y_label: &str, cells: &[(f64, f64, Option<f64>)]) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let mut xs: Vec<f64> = cells.iter().map(|c| c.0).collect();
    let mut ys: Vec<f64> = cells.iter().map(|c| c.1).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    if xs.is_empty() {
        out.push_str("</svg>\n");
        return out;
    }
    let b = [xs[0], *xs.last().unwrap(), ys[0], *ys.last().unwrap()];
    let b = bounds([(b[0], b[2]), (b[1], b[3])].iter()).unwrap();
    axes(&mut out, b, x_label, y_label);
    let plot_w = WIDTH - MARGIN / 2.0 - MARGIN;
    let plot_h = HEIGHT - MARGIN - MARGIN / 1.5;
    let cw = plot_w / xs.len() as f64;
    let ch = plot_h / ys.len() as f64;
    for &(x, y, v) in cells {
        let i = xs.iter().position(|&q| q == x).unwrap();
        let j = ys.iter().position(|&q| q == y).unwrap();
        let px = MARGIN + i as f64 * cw;
        let py = HEIGHT - MARGIN - (j as f64 + 1.0) * ch;
        let fill = match v {
            Some(v) => {
                // white at 1, red as coverage falls towards 0.5
                let g = (255.0 * ((v - 0.5) / 0.5).clamp(0.0, 1.0)).round() as u8;
                format!("rgb(255,{g},{g})")
            }
            None => "rgb(200,200,200)".into(),
        };
        let label = v.map_or_else(|| "missing".to_string(), |v| format!("{v:.3}"));
        let _ = writeln!(
            out,
            "<rect x=\"{px:.2}\" y=\"{py:.2}\" width=\"{cw:.2}\" height=\"{ch:.2}\" fill=\"{fill}\" stroke=\"white\" stroke-width=\"0.5\"><title>({x}, {y}): {label}</title></rect>"
        );
    }
    out.push_str("</svg>\n");
    out
}
