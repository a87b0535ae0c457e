//! Minimal SVG rendering of a session and its estimates.

use std::fmt::Write;

use retailopt_core::io::{EstimateFile, Pair, SessionFile};

const SIZE: f64 = 600.0;
const PALETTE: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn px(p: Pair) -> (f64, f64) {
    (p[0] * SIZE, (1.0 - p[1]) * SIZE)
}

fn path(points: &[Pair], stroke: &str, class: &str) -> String {
    let mut d = String::new();
    for (i, &p) in points.iter().enumerate() {
        let (x, y) = px(p);
        let _ = write!(d, "{}{x:.2},{y:.2}", if i == 0 { "M" } else { " L" });
    }
    format!(r#"  <path class="{class}" d="{d}" fill="none" stroke="{stroke}" stroke-width="1.5"/>"#)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Obstacles in gray, ground truth in black, estimates in distinct colors,
/// time-unknown anchors as hollow circles and time-known anchors as filled
/// ones.
pub fn render(session: &SessionFile, estimates: &[EstimateFile]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(out, "  <title>{}</title>", escape(&session.environment.name));
    let _ = writeln!(
        out,
        r##"  <rect class="domain" x="0" y="0" width="{SIZE}" height="{SIZE}" fill="white" stroke="#444"/>"##
    );
    for o in &session.environment.obstacles {
        let (x0, y1) = px(o.min);
        let (x1, y0) = px(o.max);
        let _ = writeln!(
            out,
            r##"  <rect class="obstacle" x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="#b0b0b0"/>"##,
            x1 - x0,
            y1 - y0
        );
    }
    if let Some(gt) = &session.ground_truth {
        let _ = writeln!(out, "{}", path(gt, "black", "truth"));
    }
    for (i, e) in estimates.iter().enumerate() {
        let class = format!("estimate {}", e.method.name());
        let _ = writeln!(out, "{}", path(&e.trajectory, PALETTE[i % PALETTE.len()], &class));
    }
    for &a in &session.anchors_tu {
        let (x, y) = px(a);
        let _ = writeln!(
            out,
            r##"  <circle class="anchor-tu" cx="{x:.2}" cy="{y:.2}" r="6" fill="none" stroke="#e377c2" stroke-width="2"/>"##
        );
    }
    for a in &session.anchors_tk {
        let (x, y) = px(a.loc);
        let _ = writeln!(
            out,
            r##"  <circle class="anchor-tk" cx="{x:.2}" cy="{y:.2}" r="5" fill="#17becf"/>"##
        );
    }
    out.push_str("</svg>\n");
    out
}
