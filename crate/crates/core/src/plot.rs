//! Minimal SVG charts for sweep curves and ablation bars.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 56.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    /// `(y, error)` per category, in category order; `None` leaves a gap.
    pub points: Vec<Option<(f64, f64)>>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn y_range(series: &[Series]) -> (f64, f64) {
    let mut hi = f64::MIN;
    let mut lo = f64::MAX;
    for (y, e) in series.iter().flat_map(|s| s.points.iter().flatten()) {
        hi = hi.max(y + e);
        lo = lo.min(y - e);
    }
    if hi < lo {
        return (0.0, 1.0);
    }
    let lo = lo.min(0.0);
    if hi - lo < 1e-12 {
        (lo, lo + 1.0)
    } else {
        (lo, hi + 0.05 * (hi - lo))
    }
}

struct Frame {
    lo: f64,
    hi: f64,
    n: usize,
}

impl Frame {
    fn plot_w(&self) -> f64 {
        WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    }

    fn plot_h(&self) -> f64 {
        HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
    }

    fn x(&self, k: usize) -> f64 {
        MARGIN_LEFT + self.plot_w() * (k as f64 + 0.5) / self.n.max(1) as f64
    }

    fn y(&self, v: f64) -> f64 {
        MARGIN_TOP + self.plot_h() * (1.0 - (v - self.lo) / (self.hi - self.lo))
    }
}

fn header(
    out: &mut String,
    title: &str,
    x_label: &str,
    y_label: &str,
    frame: &Frame,
    categories: &[String],
) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        MARGIN_LEFT + frame.plot_w() / 2.0,
        escape(title)
    );
    let (x0, x1) = (MARGIN_LEFT, MARGIN_LEFT + frame.plot_w());
    let (y0, y1) = (MARGIN_TOP, MARGIN_TOP + frame.plot_h());
    let _ = writeln!(
        out,
        r#"<line x1="{x0}" y1="{y1}" x2="{x1}" y2="{y1}" stroke="black"/>"#
    );
    let _ = writeln!(
        out,
        r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#
    );
    for t in 0..=4 {
        let v = frame.lo + (frame.hi - frame.lo) * t as f64 / 4.0;
        let y = frame.y(v);
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/>"#,
            x0 - 4.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
            x0 - 6.0,
            y + 4.0
        );
    }
    for (k, c) in categories.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            frame.x(k),
            y1 + 18.0,
            escape(c)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + frame.plot_w() / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        MARGIN_TOP + frame.plot_h() / 2.0,
        MARGIN_TOP + frame.plot_h() / 2.0,
        escape(y_label)
    );
}

fn legend(out: &mut String, series: &[Series]) {
    for (s, sr) in series.iter().enumerate() {
        let y = MARGIN_TOP + 10.0 + 18.0 * s as f64;
        let x = WIDTH - MARGIN_RIGHT + 12.0;
        let color = PALETTE[s % PALETTE.len()];
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{}" width="12" height="12" fill="{color}"/>"#,
            y - 10.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{y}">{}</text>"#,
            x + 18.0,
            escape(&sr.name)
        );
    }
}

fn error_bar(out: &mut String, x: f64, frame: &Frame, y: f64, e: f64) {
    if e > 0.0 {
        let (top, bottom) = (frame.y(y + e), frame.y(y - e));
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{top:.2}" x2="{x:.2}" y2="{bottom:.2}" stroke="black" stroke-width="1"/>"#
        );
    }
}

/// One polyline per series over categorical x positions, with markers and
/// error bars.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    categories: &[String],
    series: &[Series],
) -> String {
    let (lo, hi) = y_range(series);
    let frame = Frame {
        lo,
        hi,
        n: categories.len(),
    };
    let mut out = String::new();
    header(&mut out, title, x_label, y_label, &frame, categories);
    for (s, sr) in series.iter().enumerate() {
        let color = PALETTE[s % PALETTE.len()];
        let pts: Vec<String> = sr
            .points
            .iter()
            .enumerate()
            .filter_map(|(k, p)| p.map(|(y, _)| format!("{:.2},{:.2}", frame.x(k), frame.y(y))))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline class="series" data-name="{}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            escape(&sr.name),
            pts.join(" ")
        );
        for (k, p) in sr.points.iter().enumerate() {
            if let Some((y, e)) = *p {
                error_bar(&mut out, frame.x(k), &frame, y, e);
                let _ = writeln!(
                    out,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"/>"#,
                    frame.x(k),
                    frame.y(y)
                );
            }
        }
    }
    legend(&mut out, series);
    out.push_str("</svg>\n");
    out
}

/// Grouped bars: one group per category, one bar per series.
pub fn bar_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    categories: &[String],
    series: &[Series],
) -> String {
    let (lo, hi) = y_range(series);
    let frame = Frame {
        lo,
        hi,
        n: categories.len(),
    };
    let mut out = String::new();
    header(&mut out, title, x_label, y_label, &frame, categories);
    let group = frame.plot_w() / categories.len().max(1) as f64;
    let bar = group * 0.8 / series.len().max(1) as f64;
    for (s, sr) in series.iter().enumerate() {
        let color = PALETTE[s % PALETTE.len()];
        for (k, p) in sr.points.iter().enumerate() {
            if let Some((y, e)) = *p {
                let x = MARGIN_LEFT + group * (k as f64 + 0.1) + bar * s as f64;
                let (top, base) = (frame.y(y.max(0.0)), frame.y(y.min(0.0)));
                let _ = writeln!(
                    out,
                    r#"<rect class="bar" data-name="{}" x="{x:.2}" y="{top:.2}" width="{bar:.2}" height="{:.2}" fill="{color}"/>"#,
                    escape(&sr.name),
                    (base - top).max(0.0)
                );
                error_bar(&mut out, x + bar / 2.0, &frame, y, e);
            }
        }
    }
    legend(&mut out, series);
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo() -> (Vec<String>, Vec<Series>) {
        let cats = vec!["0".to_owned(), "0.001".to_owned(), "0.1".to_owned()];
        let series = vec![
            Series {
                name: "bdlm-llm".into(),
                points: vec![Some((0.2, 0.01)), Some((0.25, 0.02)), None],
            },
            Series {
                name: "a<b".into(),
                points: vec![Some((0.1, 0.0)), Some((0.3, 0.05)), Some((0.2, 0.0))],
            },
        ];
        (cats, series)
    }

    #[test]
    fn line_chart_has_one_polyline_per_series() {
        let (cats, series) = demo();
        let svg = line_chart("sweep", "gamma", "HR@1", &cats, &series);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("class=\"series\"").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 5);
        assert!(svg.contains("a&lt;b"));
        for c in &cats {
            assert!(svg.contains(&format!(">{c}</text>")));
        }
    }

    #[test]
    fn bar_chart_draws_every_present_value() {
        let (cats, series) = demo();
        let svg = bar_chart("ablation", "variant", "HR@1", &cats, &series);
        assert_eq!(svg.matches("class=\"bar\"").count(), 5);
        assert_eq!(
            bar_chart("ablation", "variant", "HR@1", &cats, &series),
            svg
        );
    }

    #[test]
    fn flat_or_empty_data_still_renders() {
        let flat = vec![Series {
            name: "s".into(),
            points: vec![Some((0.0, 0.0))],
        }];
        assert!(line_chart("t", "x", "y", &["a".into()], &flat).contains("<polyline"));
        assert!(bar_chart("t", "x", "y", &[], &[]).contains("</svg>"));
    }
}
