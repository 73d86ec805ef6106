//! Static SVG plots: the path batch over the obstacle map (first two axes)
//! plus velocity and acceleration panels of the selected member.
//!
//! Output depends only on the inputs: fixed canvas, fixed palette, and
//! coordinates printed with three decimals.

use std::fmt::Write;

use motionfield::envs::{Primitive, WorldSdf};
use motionfield::splines::Trajectory;
use ndarray::Array2;

const PANEL: f64 = 300.0;
const PAD: f64 = 20.0;
const AXIS_COLORS: [&str; 3] = ["#d62728", "#1f77b4", "#2ca02c"];
const BATCH_COLOR: &str = "#bbbbbb";
const BEST_COLOR: &str = "#ff7f0e";
const OBSTACLE_COLOR: &str = "#555555";

struct Frame {
    x0: f64,
    lo: [f64; 2],
    hi: [f64; 2],
}

impl Frame {
    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let inner = PANEL - 2.0 * PAD;
        let sx = (x - self.lo[0]) / (self.hi[0] - self.lo[0]).max(1e-12);
        let sy = (y - self.lo[1]) / (self.hi[1] - self.lo[1]).max(1e-12);
        (self.x0 + PAD + sx * inner, PAD + (1.0 - sy) * inner)
    }

    fn scale(&self) -> f64 {
        (PANEL - 2.0 * PAD) / (self.hi[0] - self.lo[0]).max(1e-12)
    }
}

fn polyline(out: &mut String, pts: impl Iterator<Item = (f64, f64)>, color: &str, width: f64) {
    let coords: Vec<String> = pts.map(|(x, y)| format!("{x:.3},{y:.3}")).collect();
    let _ = writeln!(
        out,
        r#"<polyline fill="none" stroke="{color}" stroke-width="{width}" points="{}"/>"#,
        coords.join(" ")
    );
}

fn frame_rect(out: &mut String, f: &Frame, title: &str) {
    let _ = writeln!(
        out,
        r##"<rect x="{:.3}" y="{PAD}" width="{:.3}" height="{:.3}" fill="none" stroke="#000000"/>"##,
        f.x0 + PAD,
        PANEL - 2.0 * PAD,
        PANEL - 2.0 * PAD
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.3}" y="14" font-size="12" font-family="sans-serif">{title}</text>"#,
        f.x0 + PAD
    );
}

fn map_panel(out: &mut String, env: &WorldSdf, batch: &[Trajectory], best: usize) {
    let f = Frame {
        x0: 0.0,
        lo: [env.bounds.min[0], env.bounds.min[1]],
        hi: [env.bounds.max[0], env.bounds.max[1]],
    };
    frame_rect(out, &f, &format!("{} (axes 0, 1)", env.name));
    for o in &env.obstacles {
        match o {
            Primitive::Box { min, max } => {
                let (x, y) = f.map(min[0], max[1]);
                let s = f.scale();
                let _ = writeln!(
                    out,
                    r#"<rect x="{x:.3}" y="{y:.3}" width="{:.3}" height="{:.3}" fill="{OBSTACLE_COLOR}"/>"#,
                    (max[0] - min[0]) * s,
                    (max[1] - min[1]) * s
                );
            }
            Primitive::Sphere { center, radius } => {
                let (x, y) = f.map(center[0], center[1]);
                let _ = writeln!(
                    out,
                    r#"<circle cx="{x:.3}" cy="{y:.3}" r="{:.3}" fill="{OBSTACLE_COLOR}" fill-opacity="0.6"/>"#,
                    radius * f.scale()
                );
            }
        }
    }
    for (i, t) in batch.iter().enumerate() {
        if i != best {
            polyline(
                out,
                t.positions.rows().into_iter().map(|r| f.map(r[0], r[1])),
                BATCH_COLOR,
                1.0,
            );
        }
    }
    let q = &batch[best].positions;
    polyline(
        out,
        q.rows().into_iter().map(|r| f.map(r[0], r[1])),
        BEST_COLOR,
        2.5,
    );
    for (row, color) in [(0, "#000000"), (q.nrows() - 1, "#2ca02c")] {
        let (x, y) = f.map(q[[row, 0]], q[[row, 1]]);
        let _ = writeln!(
            out,
            r#"<circle cx="{x:.3}" cy="{y:.3}" r="4" fill="{color}"/>"#
        );
    }
}

fn profile_panel(out: &mut String, x0: f64, title: &str, profile: &Array2<f64>, duration: f64) {
    let bound = profile.iter().fold(1e-9f64, |m, v| m.max(v.abs()));
    let f = Frame {
        x0,
        lo: [0.0, -bound],
        hi: [duration, bound],
    };
    frame_rect(out, &f, &format!("{title} (peak {bound:.3})"));
    let (a, b) = (f.map(0.0, 0.0), f.map(duration, 0.0));
    let _ = writeln!(
        out,
        r##"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="#999999" stroke-dasharray="4 3"/>"##,
        a.0, a.1, b.0, b.1
    );
    let l = profile.nrows();
    for k in 0..profile.ncols() {
        let color = AXIS_COLORS[k % AXIS_COLORS.len()];
        let pts =
            (0..l).map(|i| f.map(duration * i as f64 / (l - 1).max(1) as f64, profile[[i, k]]));
        polyline(out, pts, color, 1.5);
    }
}

/// Renders `batch` with member `best` highlighted.
pub fn render(env: &WorldSdf, batch: &[Trajectory], best: usize) -> String {
    let mut out = String::new();
    let width = 3.0 * PANEL;
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width} {PANEL}" width="{width}" height="{PANEL}">"#
    );
    let _ = writeln!(
        out,
        r##"<rect width="{width}" height="{PANEL}" fill="#ffffff"/>"##
    );
    if !batch.is_empty() {
        map_panel(&mut out, env, batch, best);
        let sel = &batch[best];
        profile_panel(&mut out, PANEL, "velocity", &sel.velocities, sel.duration);
        profile_panel(
            &mut out,
            2.0 * PANEL,
            "acceleration",
            &sel.accelerations,
            sel.duration,
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use motionfield::envs::Bounds;

    fn line() -> Trajectory {
        let pos = Array2::from_shape_fn(
            (5, 2),
            |(i, k)| if k == 0 { -0.5 + 0.25 * i as f64 } else { 0.1 },
        );
        Trajectory::new(
            pos,
            Array2::from_elem((5, 2), 0.2),
            Array2::zeros((5, 2)),
            2.0,
        )
        .unwrap()
    }

    #[test]
    fn rendering_is_deterministic_and_well_formed() {
        let env = WorldSdf::new(
            "w",
            Bounds {
                min: vec![-1.0, -1.0],
                max: vec![1.0, 1.0],
            },
            vec![Primitive::Sphere {
                center: vec![0.0, 0.5],
                radius: 0.2,
            }],
        )
        .unwrap();
        let batch = vec![line(), line()];
        let a = render(&env, &batch, 1);
        assert_eq!(a, render(&env, &batch, 1));
        assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
        assert_eq!(a.matches("<polyline").count(), 2 + 2 + 2);
        assert!(a.contains("<circle cx=\"150.000\""));
    }
}
