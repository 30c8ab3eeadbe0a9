//! Minimal SVG line charts. Each file carries its data as a CSV table in a
//! leading comment, so plots diff cleanly and can be re-read.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 64.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Optional shaded band `(x, lo, hi)`.
    pub band: Vec<(f64, f64, f64)>,
    pub markers: bool,
}

impl Series {
    pub fn line(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            points,
            band: Vec::new(),
            markers: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_scale: Scale,
    pub y_scale: Scale,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub series: Vec<Series>,
    pub diagonal: bool,
}

impl Chart {
    fn map(&self, v: f64, axis: (Scale, (f64, f64)), span: (f64, f64)) -> Option<f64> {
        let (scale, (lo, hi)) = axis;
        let t = match scale {
            Scale::Linear => (v - lo) / (hi - lo),
            Scale::Log => {
                if v <= 0.0 {
                    return None;
                }
                (v.ln() - lo.ln()) / (hi.ln() - lo.ln())
            }
        };
        t.is_finite()
            .then(|| span.0 + t.clamp(0.0, 1.0) * (span.1 - span.0))
    }

    fn px(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        Some((
            self.map(
                x,
                (self.x_scale, self.x_range),
                (MARGIN, WIDTH - MARGIN / 2.0),
            )?,
            self.map(
                y,
                (self.y_scale, self.y_range),
                (HEIGHT - MARGIN, MARGIN / 2.0),
            )?,
        ))
    }

    fn ticks(scale: Scale, (lo, hi): (f64, f64)) -> Vec<f64> {
        match scale {
            Scale::Linear => (0..=4).map(|i| lo + (hi - lo) * i as f64 / 4.0).collect(),
            Scale::Log => {
                let (a, b) = (lo.log10().ceil() as i32, hi.log10().floor() as i32);
                (a..=b).map(|e| 10f64.powi(e)).collect()
            }
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str("<!--\n");
        for series in &self.series {
            let _ = writeln!(s, "series: {}", series.name);
            if series.band.is_empty() {
                s.push_str("x,y\n");
                for (x, y) in &series.points {
                    let _ = writeln!(s, "{x},{y}");
                }
            } else {
                s.push_str("x,y,lo,hi\n");
                for ((x, y), (_, lo, hi)) in series.points.iter().zip(&series.band) {
                    let _ = writeln!(s, "{x},{y},{lo},{hi}");
                }
            }
        }
        s.push_str("-->\n");
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(
            s,
            r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN / 2.0, HEIGHT - MARGIN, MARGIN / 2.0);
        let _ = writeln!(
            s,
            r#"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            x1 - x0,
            y0 - y1
        );
        for t in Self::ticks(self.x_scale, self.x_range) {
            if let Some(px) = self.map(t, (self.x_scale, self.x_range), (x0, x1)) {
                let _ = writeln!(
                    s,
                    r#"<line x1="{px:.2}" y1="{y0}" x2="{px:.2}" y2="{}" stroke="black"/><text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#,
                    y0 + 5.0,
                    y0 + 18.0,
                    tick_label(t)
                );
            }
        }
        for t in Self::ticks(self.y_scale, self.y_range) {
            if let Some(py) = self.map(t, (self.y_scale, self.y_range), (y0, y1)) {
                let _ = writeln!(
                    s,
                    r#"<line x1="{}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
                    x0 - 5.0,
                    x0 - 8.0,
                    py + 4.0,
                    tick_label(t)
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            HEIGHT - 20.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
            (y0 + y1) / 2.0,
            escape(&self.y_label)
        );
        if self.diagonal {
            let lo = self.x_range.0.max(self.y_range.0);
            let hi = self.x_range.1.min(self.y_range.1);
            if let (Some(a), Some(b)) = (self.px(lo, lo), self.px(hi, hi)) {
                let _ = writeln!(
                    s,
                    r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#999" stroke-dasharray="4 4"/>"##,
                    a.0, a.1, b.0, b.1
                );
            }
        }
        for (i, series) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            if !series.band.is_empty() {
                let upper: Vec<(f64, f64)> = series
                    .band
                    .iter()
                    .filter_map(|&(x, _, hi)| self.px(x, hi))
                    .collect();
                let lower: Vec<(f64, f64)> = series
                    .band
                    .iter()
                    .rev()
                    .filter_map(|&(x, lo, _)| self.px(x, lo))
                    .collect();
                let pts = upper
                    .iter()
                    .chain(&lower)
                    .map(|(x, y)| format!("{x:.2},{y:.2}"));
                let _ = writeln!(
                    s,
                    r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
                    pts.collect::<Vec<_>>().join(" ")
                );
            }
            let pts: Vec<(f64, f64)> = series
                .points
                .iter()
                .filter_map(|&(x, y)| self.px(x, y))
                .collect();
            let path = pts
                .iter()
                .map(|(x, y)| format!("{x:.2},{y:.2}"))
                .collect::<Vec<_>>()
                .join(" ");
            let _ = writeln!(
                s,
                r#"<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>"#
            );
            if series.markers {
                for (x, y) in &pts {
                    let _ = writeln!(
                        s,
                        r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#
                    );
                }
            }
            let ly = y1 + 16.0 + 16.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
                x0 + 10.0,
                x0 + 30.0,
                x0 + 36.0,
                ly + 4.0,
                escape(&series.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.0e}")
    } else {
        let t = format!("{v:.2}");
        t.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embeds_data_and_skips_nonpositive_log_points() {
        let chart = Chart {
            title: "t <1>".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            x_scale: Scale::Log,
            y_scale: Scale::Linear,
            x_range: (1e-3, 1.0),
            y_range: (0.0, 1.0),
            series: vec![Series::line("a", vec![(0.0, 0.0), (0.01, 0.5), (1.0, 1.0)])],
            diagonal: false,
        };
        let svg = chart.render();
        assert!(svg.starts_with("<!--\nseries: a\nx,y\n0,0\n0.01,0.5\n1,1\n-->"));
        assert!(svg.contains("t &lt;1&gt;"));
        let polyline = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        assert_eq!(polyline.matches(',').count(), 2);
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
