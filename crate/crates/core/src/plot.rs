//! Minimal deterministic SVG rendering for box plots and scatter plots.
//! Coordinates are formatted with fixed precision so regenerated files are
//! byte-identical.

use std::fmt::Write as _;

use crate::metrics::BoxStats;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 30.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 60.0;

fn fmt(v: f64) -> String {
    format!("{v:.3}")
}

fn fmt_tick(v: f64) -> String {
    format!("{v:.4}")
}

struct Scale {
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl Scale {
    fn new(lo: f64, hi: f64, px_lo: f64, px_hi: f64) -> Self {
        // pad degenerate ranges so a single value still renders
        let (lo, hi) = if (hi - lo).abs() < 1e-12 { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
        let pad = (hi - lo) * 0.05;
        Scale { lo: lo - pad, hi: hi + pad, px_lo, px_hi }
    }

    fn map(&self, v: f64) -> f64 {
        self.px_lo + (v - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }
}

fn svg_header(title: &str) -> String {
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<text x=\"{cx}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" ",
            "font-size=\"15\">{title}</text>\n"
        ),
        w = WIDTH,
        h = HEIGHT,
        cx = WIDTH / 2.0,
        title = xml_escape(title),
    )
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn y_axis(out: &mut String, scale: &Scale, label: &str) {
    let _ = writeln!(
        out,
        "<line x1=\"{x}\" y1=\"{t}\" x2=\"{x}\" y2=\"{b}\" stroke=\"black\"/>",
        x = fmt(MARGIN_L),
        t = fmt(MARGIN_T),
        b = fmt(HEIGHT - MARGIN_B)
    );
    for i in 0..=4 {
        let v = scale.lo + (scale.hi - scale.lo) * i as f64 / 4.0;
        let y = scale.map(v);
        let _ = writeln!(
            out,
            "<line x1=\"{x0}\" y1=\"{y}\" x2=\"{x1}\" y2=\"{y}\" stroke=\"black\"/>",
            x0 = fmt(MARGIN_L - 4.0),
            x1 = fmt(MARGIN_L),
            y = fmt(y)
        );
        let _ = writeln!(
            out,
            "<text x=\"{x}\" y=\"{y}\" text-anchor=\"end\" font-family=\"sans-serif\" \
             font-size=\"11\">{v}</text>",
            x = fmt(MARGIN_L - 7.0),
            y = fmt(y + 4.0),
            v = fmt_tick(v)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{y}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"12\" transform=\"rotate(-90 16 {y})\">{l}</text>",
        y = fmt((MARGIN_T + HEIGHT - MARGIN_B) / 2.0),
        l = xml_escape(label)
    );
}

/// Box-and-whisker chart: one box per labelled group.
pub fn box_plot_svg(groups: &[(String, BoxStats)], title: &str, y_label: &str) -> String {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (_, b) in groups {
        lo = lo.min(b.whisker_lo).min(b.outliers.iter().copied().fold(f64::INFINITY, f64::min));
        hi = hi
            .max(b.whisker_hi)
            .max(b.outliers.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    if groups.is_empty() {
        lo = 0.0;
        hi = 1.0;
    }
    // y axis is inverted in SVG space
    let scale = Scale::new(lo, hi, HEIGHT - MARGIN_B, MARGIN_T);
    let mut out = svg_header(title);
    y_axis(&mut out, &scale, y_label);
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let slot = plot_w / groups.len().max(1) as f64;
    let box_w = (slot * 0.4).min(60.0);
    for (i, (label, b)) in groups.iter().enumerate() {
        let cx = MARGIN_L + slot * (i as f64 + 0.5);
        let (x0, x1) = (cx - box_w / 2.0, cx + box_w / 2.0);
        let (yq1, yq3) = (scale.map(b.q1), scale.map(b.q3));
        let ymed = scale.map(b.median);
        let (ywl, ywh) = (scale.map(b.whisker_lo), scale.map(b.whisker_hi));
        let _ = writeln!(
            out,
            "<line x1=\"{cx}\" y1=\"{ywl}\" x2=\"{cx}\" y2=\"{yq1}\" stroke=\"black\"/>",
            cx = fmt(cx),
            ywl = fmt(ywl),
            yq1 = fmt(yq1)
        );
        let _ = writeln!(
            out,
            "<line x1=\"{cx}\" y1=\"{yq3}\" x2=\"{cx}\" y2=\"{ywh}\" stroke=\"black\"/>",
            cx = fmt(cx),
            yq3 = fmt(yq3),
            ywh = fmt(ywh)
        );
        for (wx0, wx1, wy) in [(x0, x1, ywl), (x0, x1, ywh)] {
            let _ = writeln!(
                out,
                "<line x1=\"{a}\" y1=\"{y}\" x2=\"{b}\" y2=\"{y}\" stroke=\"black\"/>",
                a = fmt(wx0 + box_w * 0.25),
                b = fmt(wx1 - box_w * 0.25),
                y = fmt(wy)
            );
        }
        let _ = writeln!(
            out,
            "<rect x=\"{x}\" y=\"{y}\" width=\"{w}\" height=\"{h}\" fill=\"#cfe2f3\" \
             stroke=\"black\"/>",
            x = fmt(x0),
            y = fmt(yq3),
            w = fmt(box_w),
            h = fmt((yq1 - yq3).abs())
        );
        let _ = writeln!(
            out,
            "<line x1=\"{a}\" y1=\"{y}\" x2=\"{b}\" y2=\"{y}\" stroke=\"black\" \
             stroke-width=\"2\"/>",
            a = fmt(x0),
            b = fmt(x1),
            y = fmt(ymed)
        );
        for &o in &b.outliers {
            let _ = writeln!(
                out,
                "<circle cx=\"{cx}\" cy=\"{cy}\" r=\"2.5\" fill=\"none\" stroke=\"black\"/>",
                cx = fmt(cx),
                cy = fmt(scale.map(o))
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{x}\" y=\"{y}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
             font-size=\"12\">{l}</text>",
            x = fmt(cx),
            y = fmt(HEIGHT - MARGIN_B + 20.0),
            l = xml_escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Marker {
    /// Clean predictions.
    Cross,
    /// Adversarial predictions.
    Circle,
}

#[derive(Clone, Debug)]
pub struct ScatterSeries {
    pub label: String,
    pub marker: Marker,
    pub color: String,
    /// (truth, prediction) pairs.
    pub points: Vec<(f64, f64)>,
}

/// Truth-vs-prediction scatter with an identity reference line.
pub fn scatter_svg(series: &[ScatterSeries], title: &str, x_label: &str, y_label: &str) -> String {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            lo = lo.min(x).min(y);
            hi = hi.max(x).max(y);
        }
    }
    if !lo.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    let sx = Scale::new(lo, hi, MARGIN_L, WIDTH - MARGIN_R);
    let sy = Scale::new(lo, hi, HEIGHT - MARGIN_B, MARGIN_T);
    let mut out = svg_header(title);
    y_axis(&mut out, &sy, y_label);
    let _ = writeln!(
        out,
        "<line x1=\"{a}\" y1=\"{y}\" x2=\"{b}\" y2=\"{y}\" stroke=\"black\"/>",
        a = fmt(MARGIN_L),
        b = fmt(WIDTH - MARGIN_R),
        y = fmt(HEIGHT - MARGIN_B)
    );
    for i in 0..=4 {
        let v = sx.lo + (sx.hi - sx.lo) * i as f64 / 4.0;
        let x = sx.map(v);
        let _ = writeln!(
            out,
            "<text x=\"{x}\" y=\"{y}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
             font-size=\"11\">{v}</text>",
            x = fmt(x),
            y = fmt(HEIGHT - MARGIN_B + 16.0),
            v = fmt_tick(v)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{x}\" y=\"{y}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"12\">{l}</text>",
        x = fmt((MARGIN_L + WIDTH - MARGIN_R) / 2.0),
        y = fmt(HEIGHT - 18.0),
        l = xml_escape(x_label)
    );
    // identity line for reference
    let _ = writeln!(
        out,
        "<line x1=\"{a}\" y1=\"{b}\" x2=\"{c}\" y2=\"{d}\" stroke=\"#999999\" \
         stroke-dasharray=\"4 3\"/>",
        a = fmt(sx.map(sx.lo)),
        b = fmt(sy.map(sx.lo)),
        c = fmt(sx.map(sx.hi)),
        d = fmt(sy.map(sx.hi))
    );
    for s in series {
        for &(x, y) in &s.points {
            let (px, py) = (sx.map(x), sy.map(y));
            match s.marker {
                Marker::Circle => {
                    let _ = writeln!(
                        out,
                        "<circle cx=\"{x}\" cy=\"{y}\" r=\"3\" fill=\"none\" stroke=\"{c}\"/>",
                        x = fmt(px),
                        y = fmt(py),
                        c = s.color
                    );
                }
                Marker::Cross => {
                    let _ = writeln!(
                        out,
                        "<path d=\"M {a} {b} L {c} {d} M {a} {d} L {c} {b}\" stroke=\"{col}\"/>",
                        a = fmt(px - 3.0),
                        b = fmt(py - 3.0),
                        c = fmt(px + 3.0),
                        d = fmt(py + 3.0),
                        col = s.color
                    );
                }
            }
        }
    }
    // legend
    for (i, s) in series.iter().enumerate() {
        let y = MARGIN_T + 14.0 * i as f64 + 6.0;
        let x = WIDTH - MARGIN_R - 150.0;
        match s.marker {
            Marker::Circle => {
                let _ = writeln!(
                    out,
                    "<circle cx=\"{x}\" cy=\"{y}\" r=\"3\" fill=\"none\" stroke=\"{c}\"/>",
                    x = fmt(x),
                    y = fmt(y),
                    c = s.color
                );
            }
            Marker::Cross => {
                let _ = writeln!(
                    out,
                    "<path d=\"M {a} {b} L {c} {d} M {a} {d} L {c} {b}\" stroke=\"{col}\"/>",
                    a = fmt(x - 3.0),
                    b = fmt(y - 3.0),
                    c = fmt(x + 3.0),
                    d = fmt(y + 3.0),
                    col = s.color
                );
            }
        }
        let _ = writeln!(
            out,
            "<text x=\"{x}\" y=\"{y}\" font-family=\"sans-serif\" font-size=\"11\">{l}</text>",
            x = fmt(x + 8.0),
            y = fmt(y + 4.0),
            l = xml_escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::box_stats;

    #[test]
    fn box_plot_renders_and_is_deterministic() {
        let groups = vec![
            ("a".to_string(), box_stats(&[0.1, 0.2, 0.3, 0.4, 0.9]).unwrap()),
            ("b".to_string(), box_stats(&[0.5]).unwrap()),
        ];
        let a = box_plot_svg(&groups, "delta", "value");
        let b = box_plot_svg(&groups, "delta", "value");
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.ends_with("</svg>\n"));
        assert!(a.contains("rect"));
    }

    #[test]
    fn single_value_box_degenerates_to_point_without_panicking() {
        let groups = vec![("solo".to_string(), box_stats(&[0.25]).unwrap())];
        let svg = box_plot_svg(&groups, "t", "y");
        assert!(svg.contains("solo"));
    }

    #[test]
    fn scatter_renders_both_markers() {
        let series = vec![
            ScatterSeries {
                label: "clean".into(),
                marker: Marker::Cross,
                color: "#1f77b4".into(),
                points: vec![(0.2, 0.25), (0.8, 0.7)],
            },
            ScatterSeries {
                label: "adversarial".into(),
                marker: Marker::Circle,
                color: "#d62728".into(),
                points: vec![(0.2, 0.5)],
            },
        ];
        let svg = scatter_svg(&series, "emotion", "truth", "prediction");
        assert!(svg.contains("circle"));
        assert!(svg.contains("path"));
        assert!(svg.contains("adversarial"));
    }

    #[test]
    fn empty_scatter_still_valid_svg() {
        let svg = scatter_svg(&[], "t", "x", "y");
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }
}
