//! Minimal static SVG output: time-series line plots and side-view pose
//! schematics. Output depends only on the data, so files are reproducible.

use std::fmt::Write as _;

use locoman::model::{arm_fk, hip_ground_projection, rot_zyx, RobotModel, Vec3, NUM_LEGS};
use locoman::pose::PoseDecision;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// One named line of a plot.
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

fn bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    let pad = ((y1 - y0) * 0.05).max(1e-6);
    (x0, x1, y0 - pad, y1 + pad)
}

/// Line plot with axes, tick labels and a legend.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (x0, x1, y0, y1) = bounds(series);
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0);
    let _ = writeln!(
        s,
        r#"<path d="M{m} {t} L{m} {b} L{r} {b}" stroke="black" fill="none"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.3}</text>"#,
            px(xv),
            H - MARGIN + 16.0,
            xv
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.3}</text>"#,
            MARGIN - 4.0,
            py(yv) + 4.0,
            yv
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{y_label}</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut d = String::new();
        for (k, &(x, y)) in ser.points.iter().enumerate() {
            let _ = write!(d, "{}{:.2} {:.2} ", if k == 0 { "M" } else { "L" }, px(x), py(y));
        }
        let dash = if ser.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            s,
            r#"<path d="{}" stroke="{color}" fill="none" stroke-width="1.5"{dash}/>"#,
            d.trim_end()
        );
        let ly = MARGIN + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly:.1}" fill="{color}">{}</text>"#,
            W - MARGIN - 150.0,
            ser.label
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Side view (x-z plane) of a solved pose: body outline, legs, arm and the
/// grip target.
pub fn pose_schematic(title: &str, pose: &PoseDecision, grip: &Vec3, model: &RobotModel) -> String {
    let scale = 400.0;
    let ox = 120.0;
    let ground = H - 60.0;
    let tx = |p: &Vec3| (ox + (p.x - pose.pos.x + 0.3) * scale, ground - p.z * scale);
    let r = rot_zyx(&pose.euler);
    let hips: Vec<Vec3> = (0..NUM_LEGS)
        .map(|i| pose.pos + r * Vec3::from(model.hip_offset[i]))
        .collect();
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0);
    let _ = writeln!(s, r#"<line x1="0" y1="{ground}" x2="{W}" y2="{ground}" stroke="gray"/>"#);
    // body outline through the front and rear hips
    let front = hips[0];
    let rear = hips[2];
    let (fx, fz) = tx(&front);
    let (rx, rz) = tx(&rear);
    let (cx, cz) = tx(&pose.pos);
    let _ = writeln!(
        s,
        r#"<line x1="{rx:.1}" y1="{rz:.1}" x2="{fx:.1}" y2="{fz:.1}" stroke="black" stroke-width="10" stroke-linecap="round"/>"#
    );
    let _ = writeln!(s, r#"<circle cx="{cx:.1}" cy="{cz:.1}" r="4" fill="white" stroke="black"/>"#);
    for (i, hip) in hips.iter().enumerate() {
        let foot = hip_ground_projection(&pose.pos, &pose.euler, i, model);
        let (hx, hz) = tx(hip);
        let (fx, fz) = tx(&foot);
        let _ = writeln!(
            s,
            r##"<line x1="{hx:.1}" y1="{hz:.1}" x2="{fx:.1}" y2="{fz:.1}" stroke="#555" stroke-width="3"/>"##
        );
    }
    let mount = pose.pos + r * model.mount();
    let ee = arm_fk(&pose.pos, &pose.euler, pose.q_arm, model).position;
    let (mx, mz) = tx(&mount);
    let (ex, ez) = tx(&ee);
    let (gx, gz) = tx(grip);
    let _ = writeln!(
        s,
        r##"<line x1="{mx:.1}" y1="{mz:.1}" x2="{ex:.1}" y2="{ez:.1}" stroke="#1f77b4" stroke-width="4"/>"##
    );
    let _ = writeln!(s, r##"<circle cx="{gx:.1}" cy="{gz:.1}" r="6" fill="none" stroke="#d62728" stroke-width="2"/>"##);
    let _ = writeln!(
        s,
        r#"<text x="20" y="{}">p_z = {:.4} m, pitch = {:.4} rad, q = {:.4} rad</text>"#,
        H - 20.0,
        pose.pos.z,
        pose.euler.y,
        pose.q_arm
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plot_is_deterministic_and_closed() {
        let series = [Series {
            label: "pz".into(),
            points: vec![(0.0, 0.35), (1.0, 0.36)],
            dashed: false,
        }];
        let a = line_plot("t", "x", "y", &series);
        assert_eq!(a, line_plot("t", "x", "y", &series));
        assert!(a.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn empty_series_still_render() {
        let svg = line_plot("t", "x", "y", &[]);
        assert!(svg.contains("<svg"));
    }
}
