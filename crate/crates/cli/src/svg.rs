//! Minimal line charts of a [`ResultTable`].

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::error::{CliError, CliResult};
use crate::table::{fmt_lambda, ResultTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XAxis {
    /// Sample size on x; one series per (metric, λ).
    N,
    /// λ on x (the `∞` endpoint is dropped); one series per (metric, n).
    Lambda,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub title: String,
    /// Metrics to draw; all metrics when empty.
    pub metrics: Vec<String>,
    pub x: XAxis,
    pub log_x: bool,
    pub log_y: bool,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

type Series = BTreeMap<String, Vec<(f64, f64)>>;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Mean value per (series, x), in ascending x. Points that cannot be shown on
/// the requested axes are dropped.
fn collect_series(table: &ResultTable, spec: &PlotSpec) -> Series {
    let mut sums: BTreeMap<String, BTreeMap<u64, (f64, f64, usize)>> = BTreeMap::new();
    for r in table.rows() {
        if !spec.metrics.is_empty() && !spec.metrics.contains(&r.metric) {
            continue;
        }
        let (x, label) = match spec.x {
            XAxis::N => {
                let lam = fmt_lambda(r.lambda);
                let label = if lam.is_empty() { r.metric.clone() } else { format!("{} λ={lam}", r.metric) };
                (r.n as f64, label)
            }
            XAxis::Lambda => match r.lambda {
                Some(l) if !l.is_infinite() => (l.value(), format!("{} n={}", r.metric, r.n)),
                _ => continue,
            },
        };
        if !x.is_finite() || !r.value.is_finite() || (spec.log_x && x <= 0.0) || (spec.log_y && r.value <= 0.0) {
            continue;
        }
        // f64 bits order like the values for nonnegative x.
        let slot = sums.entry(label).or_default().entry(x.to_bits()).or_insert((x, 0.0, 0));
        slot.1 += r.value;
        slot.2 += 1;
    }
    sums.into_iter()
        .map(|(label, pts)| {
            let mut pts: Vec<(f64, f64)> = pts.into_values().map(|(x, s, c)| (x, s / c as f64)).collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            (label, pts)
        })
        .collect()
}

struct Scale {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Scale {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let t: Vec<f64> = values.map(|v| if log { v.log10() } else { v }).collect();
        let mut lo = t.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo < 1e-12 * hi.abs().max(1.0) {
            lo -= 0.5;
            hi += 0.5;
        }
        Self { lo, hi, log }
    }

    fn unit(&self, v: f64) -> f64 {
        let t = if self.log { v.log10() } else { v };
        (t - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let (a, b) = (self.lo.ceil() as i64, self.hi.floor() as i64);
            if b >= a {
                return (a..=b).map(|k| (10f64.powi(k as i32), format!("1e{k}"))).collect();
            }
        }
        (0..5)
            .map(|i| {
                let t = self.lo + (self.hi - self.lo) * i as f64 / 4.0;
                let v = if self.log { 10f64.powf(t) } else { t };
                (v, tick_label(v))
            })
            .collect()
    }
}

fn tick_label(v: f64) -> String {
    if v == 0.0 || (1e-3..1e4).contains(&v.abs()) {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

/// Renders `table` as a standalone SVG document. Output depends only on the
/// inputs.
pub fn emit_svg(table: &ResultTable, spec: &PlotSpec) -> CliResult<String> {
    let series = collect_series(table, spec);
    if table.is_empty() || series.values().all(Vec::is_empty) {
        return Err(CliError::EmptyTable);
    }
    let xs = Scale::fit(series.values().flatten().map(|p| p.0), spec.log_x);
    let ys = Scale::fit(series.values().flatten().map(|p| p.1), spec.log_y);
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let px = |x: f64| LEFT + xs.unit(x) * pw;
    let py = |y: f64| TOP + (1.0 - ys.unit(y)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(&spec.title)
    );
    let _ = writeln!(
        s,
        r#"<path d="M{LEFT:.2},{TOP:.2} V{:.2} H{:.2}" fill="none" stroke="black"/>"#,
        TOP + ph,
        LEFT + pw
    );
    for (v, label) in xs.ticks() {
        let x = px(v);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, TOP + ph, TOP + ph + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#, TOP + ph + 18.0);
    }
    for (v, label) in ys.ticks() {
        let y = py(v);
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT:.2}" y2="{y:.2}" stroke="black"/>"#, LEFT - 5.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#, LEFT - 8.0, y + 4.0);
    }
    let x_name = match spec.x {
        XAxis::N => "n",
        XAxis::Lambda => "lambda",
    };
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{x_name}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0
    );
    for (i, (label, pts)) in series.iter().filter(|(_, p)| !p.is_empty()).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            points.join(" ")
        );
        let ly = TOP + 14.0 * i as f64 + 6.0;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}"/>"#, lx + 16.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 20.0, ly + 4.0, escape(label));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{Replication, Row};
    use causreg_core::Lambda;

    fn spec(log: bool) -> PlotSpec {
        PlotSpec { title: "t".into(), metrics: vec![], x: XAxis::N, log_x: log, log_y: log }
    }

    fn two_points() -> ResultTable {
        let mut t = ResultTable::new("r", "e");
        t.push(Row::new(Replication::Index(0), 100, None, "m", 1.0)).unwrap();
        t.push(Row::new(Replication::Index(0), 1000, None, "m", 0.1)).unwrap();
        t
    }

    #[test]
    fn one_series_one_polyline() {
        let svg = emit_svg(&two_points(), &spec(false)).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }

    #[test]
    fn empty_table() {
        let t = ResultTable::new("r", "e");
        assert!(matches!(emit_svg(&t, &spec(false)), Err(CliError::EmptyTable)));
        let mut s = spec(false);
        s.metrics = vec!["absent".into()];
        assert!(matches!(emit_svg(&two_points(), &s), Err(CliError::EmptyTable)));
    }

    fn polyline_points(svg: &str) -> Vec<(f64, f64)> {
        let start = svg.find("points=\"").unwrap() + 8;
        let end = start + svg[start..].find('"').unwrap();
        svg[start..end]
            .split(' ')
            .map(|p| {
                let (x, y) = p.split_once(',').unwrap();
                (x.parse().unwrap(), y.parse().unwrap())
            })
            .collect()
    }

    #[test]
    fn log_axes_are_monotone() {
        let mut t = ResultTable::new("r", "e");
        for (n, v) in [(10, 5.0), (100, 0.5), (1000, 0.2), (10_000, 0.01)] {
            t.push(Row::new(Replication::Index(0), n, None, "m", v)).unwrap();
        }
        for log in [false, true] {
            let pts = polyline_points(&emit_svg(&t, &spec(log)).unwrap());
            assert_eq!(pts.len(), 4);
            // x increasing left to right; larger values plot higher (smaller y).
            assert!(pts.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 > w[0].1));
        }
        // Decades are equally spaced on a log axis.
        let pts = polyline_points(&emit_svg(&t, &spec(true)).unwrap());
        assert!(((pts[1].0 - pts[0].0) - (pts[3].0 - pts[2].0)).abs() < 0.02);
    }

    #[test]
    fn series_split_by_lambda_and_replications_averaged() {
        let mut t = ResultTable::new("r", "e");
        for rep in 0..2 {
            for l in [Lambda::Finite(0.0), Lambda::Infinity] {
                t.push(Row::new(Replication::Index(rep), 10, Some(l), "m", rep as f64)).unwrap();
                t.push(Row::new(Replication::Index(rep), 20, Some(l), "m", 1.0)).unwrap();
            }
        }
        let svg = emit_svg(&t, &spec(false)).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        let lambda_axis = PlotSpec { x: XAxis::Lambda, ..spec(false) };
        // Only the finite λ survives on a λ axis: two series (n = 10, 20), one point each.
        let svg = emit_svg(&t, &lambda_axis).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn deterministic() {
        let a = emit_svg(&two_points(), &spec(true)).unwrap();
        let b = emit_svg(&two_points(), &spec(true)).unwrap();
        assert_eq!(a, b);
    }
}
