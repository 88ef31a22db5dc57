//! Minimal SVG line plots and heatmaps.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: (f64, f64, f64, f64) = (70.0, 20.0, 40.0, 50.0); // left, right, top, bottom
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-300 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn frame(out: &mut String, title: &str, xlabel: &str, ylabel: &str, xr: (f64, f64), yr: (f64, f64), log_y: bool) {
    let (l, r, t, b) = MARGIN;
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(out, r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#, W - l - r, H - t - b);
    let fmt = |v: f64| format!("{v:.3e}");
    let ylab = |v: f64| if log_y { format!("1e{v:.1}") } else { fmt(v) };
    let _ = writeln!(out, r#"<text x="{l}" y="{}" text-anchor="start">{}</text>"#, H - b + 16.0, fmt(xr.0));
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, W - r, H - b + 16.0, fmt(xr.1));
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, l - 4.0, H - b, ylab(yr.0));
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, l - 4.0, t + 10.0, ylab(yr.1));
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (l + W - r) / 2.0, H - 10.0, escape(xlabel));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (t + H - b) / 2.0,
        (t + H - b) / 2.0,
        escape(ylabel)
    );
}

/// Line plot of one or more series; with `log_y` the y axis is `log10`.
pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series], log_y: bool) -> String {
    let ty = |v: f64| if log_y { if v > 0.0 { v.log10() } else { f64::NAN } } else { v };
    let xr = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let yr = range(series.iter().flat_map(|s| s.points.iter().map(|p| ty(p.1))));
    let mut out = String::new();
    frame(&mut out, title, xlabel, ylabel, xr, yr, log_y);
    let (l, r, t, b) = MARGIN;
    let px = |x: f64| l + (x - xr.0) / (xr.1 - xr.0) * (W - l - r);
    let py = |y: f64| H - b - (y - yr.0) / (yr.1 - yr.0) * (H - t - b);
    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| ty(p.1).is_finite() && p.0.is_finite())
            .map(|p| format!("{:.2},{:.2}", px(p.0), py(ty(p.1))))
            .collect();
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        for p in &pts {
            let (x, y) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(out, r#"<circle cx="{x}" cy="{y}" r="2.5" fill="{color}"/>"#);
        }
        let _ = writeln!(out, r#"<text x="{}" y="{}" fill="{color}">{}</text>"#, l + 8.0, t + 16.0 + 14.0 * k as f64, escape(&s.label));
    }
    out.push_str("</svg>\n");
    out
}

fn color(u: f64) -> String {
    // dark blue, teal, yellow
    let stops = [(0.0, [68.0, 1.0, 84.0]), (0.5, [33.0, 145.0, 140.0]), (1.0, [253.0, 231.0, 37.0])];
    let u = if u.is_finite() { u.clamp(0.0, 1.0) } else { 0.0 };
    let (a, b) = if u <= 0.5 { (stops[0], stops[1]) } else { (stops[1], stops[2]) };
    let w = (u - a.0) / (b.0 - a.0);
    let c: Vec<u8> = (0..3).map(|i| (a.1[i] + w * (b.1[i] - a.1[i])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Heatmap of `values[i * ys.len() + j]` at `(xs[i], ys[j])`, thinned to at
/// most 96 cells per axis.
pub fn heatmap(title: &str, xlabel: &str, ylabel: &str, xs: &[f64], ys: &[f64], values: &[f64]) -> String {
    let xr = range(xs.iter().copied());
    let yr = range(ys.iter().copied());
    let vr = range(values.iter().copied());
    let mut out = String::new();
    frame(&mut out, &format!("{title}  [{:.3e}, {:.3e}]", vr.0, vr.1), xlabel, ylabel, xr, yr, false);
    let (l, r, t, b) = MARGIN;
    let sx = xs.len().div_ceil(96).max(1);
    let sy = ys.len().div_ceil(96).max(1);
    let (nx, ny) = (xs.len().div_ceil(sx), ys.len().div_ceil(sy));
    let cw = (W - l - r) / nx as f64;
    let ch = (H - t - b) / ny as f64;
    for ci in 0..nx {
        for cj in 0..ny {
            let v = values[ci * sx * ys.len() + cj * sy];
            let u = (v - vr.0) / (vr.1 - vr.0);
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                l + ci as f64 * cw,
                H - b - (cj + 1) as f64 * ch,
                cw + 0.3,
                ch + 0.3,
                color(u)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plots_are_well_formed() {
        let s = Series { label: "a<b".into(), points: vec![(0.0, 1.0), (1.0, 0.1), (2.0, 0.0)] };
        let svg = line_plot("t", "x", "y", &[s], true);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("a&lt;b"));
        let h = heatmap("h", "x", "y", &[0.0, 1.0], &[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(h.matches("<rect").count(), 2 + 6);
    }
}
