use std::fmt::Write as _;

use super::aggregate::mean_std;
use super::metrics::MetricLog;

/// Mean return across seeds per episode index, with its spread.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub label: String,
    /// `(env_steps, mean, std, seeds)`; env steps are averaged across seeds.
    pub points: Vec<(f64, f64, f64, usize)>,
}

/// One curve per method for `task`, built from that task's episodes.
pub fn learning_curves(logs: &[MetricLog], task: &str) -> Vec<Curve> {
    let mut methods: Vec<&str> = logs.iter().map(|l| l.run.method.as_str()).collect();
    methods.sort();
    methods.dedup();
    methods
        .into_iter()
        .map(|method| {
            let runs: Vec<Vec<(u64, f64)>> = logs
                .iter()
                .filter(|l| l.run.method == method)
                .map(|l| {
                    l.episodes
                        .iter()
                        .filter(|e| e.domain == task)
                        .map(|e| (e.env_steps, e.episode_return))
                        .collect()
                })
                .collect();
            let longest = runs.iter().map(Vec::len).max().unwrap_or(0);
            let points = (0..longest)
                .map(|i| {
                    let at: Vec<(u64, f64)> = runs.iter().filter_map(|r| r.get(i)).copied().collect();
                    let steps: Vec<f64> = at.iter().map(|p| p.0 as f64).collect();
                    let returns: Vec<f64> = at.iter().map(|p| p.1).collect();
                    let (mean, std) = mean_std(&returns);
                    (mean_std(&steps).0, mean, std, at.len())
                })
                .collect();
            Curve {
                label: method.to_string(),
                points,
            }
        })
        .collect()
}

/// Long-format CSV: `method, env_steps, mean_return, std_return, seeds`.
pub fn curves_csv(curves: &[Curve]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "env_steps", "mean_return", "std_return", "seeds"])
        .expect("in-memory write");
    for c in curves {
        for &(x, m, s, n) in &c.points {
            w.write_record([
                c.label.clone(),
                x.to_string(),
                m.to_string(),
                s.to_string(),
                n.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("flushed")).expect("utf-8")
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// SVG line chart: one line per curve, shaded ±1 std across seeds.
pub fn render_svg(curves: &[Curve], title: &str) -> String {
    let (w, h) = (720.0, 420.0);
    let (left, right, top, bottom) = (70.0, 160.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;

    let pts = curves.iter().flat_map(|c| &c.points);
    let mut x_max = pts.clone().map(|p| p.0).fold(0.0f64, f64::max);
    let mut y_min = pts.clone().map(|p| p.1 - p.2).fold(f64::INFINITY, f64::min);
    let mut y_max = pts.map(|p| p.1 + p.2).fold(f64::NEG_INFINITY, f64::max);
    if x_max <= 0.0 {
        x_max = 1.0;
    }
    if !y_min.is_finite() || !y_max.is_finite() {
        (y_min, y_max) = (0.0, 1.0);
    }
    if y_max - y_min < 1e-9 {
        y_min -= 0.5;
        y_max += 0.5;
    }
    let sx = |x: f64| left + pw * x / x_max;
    let sy = |y: f64| top + ph * (1.0 - (y - y_min) / (y_max - y_min));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        left + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x_max * f;
        let yv = y_min + (y_max - y_min) * f;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(xv),
            top + ph + 18.0,
            fmt_tick(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 6.0,
            sy(yv) + 4.0,
            fmt_tick(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">environment steps</text>"#,
        left + pw / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">episode return</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );

    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if c.points.is_empty() {
            continue;
        }
        let upper = c.points.iter().map(|p| (sx(p.0), sy(p.1 + p.2)));
        let lower = c.points.iter().rev().map(|p| (sx(p.0), sy(p.1 - p.2)));
        let band: Vec<String> = upper
            .chain(lower)
            .map(|(x, y)| format!("{x:.1},{y:.1}"))
            .collect();
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            band.join(" ")
        );
        let line: Vec<String> = c
            .points
            .iter()
            .map(|p| format!("{:.1},{:.1}", sx(p.0), sy(p.1)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"#,
            line.join(" ")
        );
        let ly = top + 16.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(&c.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1000.0 {
        format!("{:.0}", v)
    } else if v.abs() >= 10.0 {
        format!("{:.1}", v)
    } else {
        format!("{:.2}", v)
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
