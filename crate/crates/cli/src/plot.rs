//! SVG overlay of a map, the observed history and sampled rollouts.

use std::fmt::Write as _;

use cocarry::world::{MapConfig, Pose2};

const PX_PER_M: f64 = 60.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];

fn polyline(out: &mut String, poses: &[Pose2], height: f64, color: &str, width: f64) {
    let pts: Vec<String> = poses
        .iter()
        .map(|p| format!("{:.1},{:.1}", p.x * PX_PER_M, height - p.y * PX_PER_M))
        .collect();
    writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}" stroke-opacity="0.8"/>"#,
        pts.join(" ")
    )
    .expect("write to string");
}

pub fn render_svg(map: &MapConfig, history: &[Pose2], rollouts: &[Vec<Pose2>]) -> String {
    let (lo, hi) = (map.bounds.min, map.bounds.max);
    let w = (hi.x - lo.x) * PX_PER_M;
    let h = (hi.y - lo.y) * PX_PER_M;
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#)
        .expect("write to string");
    writeln!(
        s,
        r##"<rect width="{w:.0}" height="{h:.0}" fill="#fafafa" stroke="#333"/>"##
    )
    .expect("write to string");
    for o in &map.obstacles {
        let side = 2.0 * o.half_extent * PX_PER_M;
        let x = (o.center.x - o.half_extent) * PX_PER_M;
        let y = h - (o.center.y + o.half_extent) * PX_PER_M;
        writeln!(
            s,
            r##"<rect x="{x:.1}" y="{y:.1}" width="{side:.1}" height="{side:.1}" fill="#555"/>"##
        )
        .expect("write to string");
    }
    let g = map.goal;
    writeln!(
        s,
        r##"<circle cx="{:.1}" cy="{:.1}" r="{:.1}" fill="#8fd18f" fill-opacity="0.6"/>"##,
        g.center.x * PX_PER_M,
        h - g.center.y * PX_PER_M,
        g.radius * PX_PER_M
    )
    .expect("write to string");
    for (i, r) in rollouts.iter().enumerate() {
        polyline(&mut s, r, h, COLORS[i % COLORS.len()], 1.5);
    }
    polyline(&mut s, history, h, "#000", 3.0);
    s.push_str("</svg>\n");
    s
}
