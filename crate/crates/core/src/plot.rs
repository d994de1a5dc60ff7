//! Minimal SVG line plot for loss curves.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 50.0;

/// Epoch-mean loss against epoch (1-based), with axes and five y ticks.
/// Non-finite values are skipped.
pub fn loss_curve_svg(losses: &[f64]) -> String {
    let finite: Vec<(usize, f64)> = losses
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .map(|(i, &v)| (i + 1, v))
        .collect();
    let (mut lo, mut hi) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &(_, v)| {
            (a.min(v), b.max(v))
        });
    if finite.is_empty() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let n = losses.len().max(2);
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let x = |e: usize| LEFT + pw * (e - 1) as f64 / (n - 1) as f64;
    let y = |v: f64| TOP + ph * (1.0 - (v - lo) / (hi - lo));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{LEFT} {TOP} V{} H{}" fill="none" stroke="black"/>"#,
        TOP + ph,
        LEFT + pw
    );
    for t in 0..=4 {
        let v = lo + (hi - lo) * t as f64 / 4.0;
        let yy = y(v);
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{yy:.2}" x2="{LEFT}" y2="{yy:.2}" stroke="black"/>"#,
            LEFT - 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" font-size="11" text-anchor="end">{v:.4}</text>"#,
            LEFT - 8.0,
            yy + 4.0
        );
    }
    for e in [1, n.div_ceil(2), n] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" font-size="11" text-anchor="middle">{e}</text>"#,
            x(e),
            TOP + ph + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">epoch</text>"#,
        LEFT + pw / 2.0,
        H - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 15 {})">train loss</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    let points: Vec<String> = finite
        .iter()
        .map(|&(e, v)| format!("{:.2},{:.2}", x(e), y(v)))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
        points.join(" ")
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_spans_plot_area() {
        let svg = loss_curve_svg(&[1.0, 0.5, 0.25]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("70.00,20.00"));
        assert!(svg.contains("620.00,350.00"));
        assert_eq!(svg, loss_curve_svg(&[1.0, 0.5, 0.25]));
        assert!(loss_curve_svg(&[]).contains("<polyline points=\"\""));
        assert!(loss_curve_svg(&[2.0]).contains("70.00,"));
    }
}
