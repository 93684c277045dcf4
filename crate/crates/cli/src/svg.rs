//! Minimal static SVG charts. Output depends only on the inputs, so repeated
//! runs give byte-identical files.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

enum Mark {
    Points { xy: Vec<(f64, f64)>, color: &'static str },
    Line { xy: Vec<(f64, f64)>, color: &'static str, dashed: bool },
    /// Vertical segments `(x, y_low, y_high)`.
    Segments { xs: Vec<(f64, f64, f64)>, color: &'static str, width: f64 },
    /// Bars `(x_left, x_right, height)` from zero.
    Bars { bars: Vec<(f64, f64, f64)>, color: &'static str },
}

pub struct Chart {
    title: String,
    x_label: String,
    y_label: String,
    marks: Vec<Mark>,
    /// Category names at x = 1, 2, ...; replaces numeric x ticks.
    categories: Option<Vec<String>>,
    include_zero: bool,
}

/// Rounded tick step giving about `target` intervals over `span`.
fn tick_step(span: f64, target: f64) -> f64 {
    let raw = span / target;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let nice = if norm < 1.5 {
        1.0
    } else if norm < 3.0 {
        2.0
    } else if norm < 7.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

impl Chart {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Chart {
        Chart {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            marks: Vec::new(),
            categories: None,
            include_zero: false,
        }
    }

    pub fn points(mut self, xy: Vec<(f64, f64)>, color: &'static str) -> Chart {
        self.marks.push(Mark::Points { xy, color });
        self
    }

    pub fn line(mut self, xy: Vec<(f64, f64)>, color: &'static str, dashed: bool) -> Chart {
        self.marks.push(Mark::Line { xy, color, dashed });
        self
    }

    pub fn segments(mut self, xs: Vec<(f64, f64, f64)>, color: &'static str, width: f64) -> Chart {
        self.marks.push(Mark::Segments { xs, color, width });
        self
    }

    pub fn bars(mut self, bars: Vec<(f64, f64, f64)>, color: &'static str) -> Chart {
        self.marks.push(Mark::Bars { bars, color });
        self.include_zero = true;
        self
    }

    pub fn categories(mut self, names: Vec<String>) -> Chart {
        self.categories = Some(names);
        self
    }

    pub fn with_zero(mut self) -> Chart {
        self.include_zero = true;
        self
    }

    fn extent(&self) -> ((f64, f64), (f64, f64)) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for m in &self.marks {
            match m {
                Mark::Points { xy, .. } | Mark::Line { xy, .. } => {
                    xs.extend(xy.iter().map(|p| p.0));
                    ys.extend(xy.iter().map(|p| p.1));
                }
                Mark::Segments { xs: s, .. } => {
                    xs.extend(s.iter().map(|p| p.0));
                    ys.extend(s.iter().flat_map(|p| [p.1, p.2]));
                }
                Mark::Bars { bars, .. } => {
                    xs.extend(bars.iter().flat_map(|b| [b.0, b.1]));
                    ys.extend(bars.iter().map(|b| b.2));
                }
            }
        }
        if let Some(c) = &self.categories {
            xs.extend([0.5, c.len() as f64 + 0.5]);
        }
        if self.include_zero {
            ys.push(0.0);
        }
        let range = |v: &[f64]| {
            let finite = v.iter().copied().filter(|x| x.is_finite());
            let lo = finite.clone().fold(f64::INFINITY, f64::min);
            let hi = finite.fold(f64::NEG_INFINITY, f64::max);
            if !lo.is_finite() {
                return (0.0, 1.0);
            }
            if hi - lo < 1e-12 {
                return (lo - 0.5, hi + 0.5);
            }
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        };
        let x = if self.categories.is_some() {
            let n = self.categories.as_ref().map_or(1, |c| c.len()) as f64;
            (0.5, n + 0.5)
        } else {
            range(&xs)
        };
        (x, range(&ys))
    }

    pub fn render(&self) -> String {
        let ((x0, x1), (y0, y1)) = self.extent();
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            out,
            r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
        );

        // y ticks
        let step = tick_step(y1 - y0, 6.0);
        let mut t = (y0 / step).ceil() * step;
        while t <= y1 + 1e-12 {
            let y = sy(t);
            let _ = writeln!(out, r##"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT:.2}" y2="{y:.2}" stroke="#333"/>"##, LEFT - 5.0);
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                LEFT - 8.0,
                y + 4.0,
                fmt_num(t)
            );
            t += step;
        }
        // x ticks
        let base = TOP + ph;
        match &self.categories {
            Some(names) => {
                for (i, name) in names.iter().enumerate() {
                    let x = sx(i as f64 + 1.0);
                    let _ = writeln!(out, r##"<line x1="{x:.2}" y1="{base:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/>"##, base + 5.0);
                    let _ = writeln!(
                        out,
                        r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                        base + 20.0,
                        escape(name)
                    );
                }
            }
            None => {
                let step = tick_step(x1 - x0, 8.0);
                let mut t = (x0 / step).ceil() * step;
                while t <= x1 + 1e-12 {
                    let x = sx(t);
                    let _ = writeln!(out, r##"<line x1="{x:.2}" y1="{base:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/>"##, base + 5.0);
                    let _ = writeln!(
                        out,
                        r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                        base + 20.0,
                        fmt_num(t)
                    );
                    t += step;
                }
            }
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 15.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );

        for m in &self.marks {
            match m {
                Mark::Bars { bars, color } => {
                    for &(l, r, h) in bars {
                        let (top, bottom) = (sy(h.max(0.0)), sy(0.0));
                        let _ = writeln!(
                            out,
                            r#"<rect x="{:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{color}" stroke="white"/>"#,
                            sx(l),
                            sx(r) - sx(l),
                            bottom - top
                        );
                    }
                }
                Mark::Line { xy, color, dashed } => {
                    let pts: Vec<String> = xy
                        .iter()
                        .filter(|p| p.0.is_finite() && p.1.is_finite())
                        .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                        .collect();
                    let dash = if *dashed { r#" stroke-dasharray="5,4""# } else { "" };
                    let _ = writeln!(
                        out,
                        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
                        pts.join(" ")
                    );
                }
                Mark::Segments { xs, color, width } => {
                    for &(x, lo, hi) in xs {
                        let _ = writeln!(
                            out,
                            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="{width}"/>"#,
                            sx(x),
                            sy(lo),
                            sx(x),
                            sy(hi)
                        );
                    }
                }
                Mark::Points { xy, color } => {
                    for &(x, y) in xy.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
                        let _ = writeln!(
                            out,
                            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="none" stroke="{color}"/>"#,
                            sx(x),
                            sy(y)
                        );
                    }
                }
            }
        }
        out.push_str("</svg>\n");
        out
    }
}
