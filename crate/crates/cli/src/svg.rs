//! Standalone SVG of a trajectory: obstacles, the decimated path and the
//! fitted strip.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use wtb_core::{rectangle_corners, StripFit, SystemParams, Vec2};

pub const MAX_VERTICES: usize = 10_000;
const MAX_OBSTACLES: usize = 5_000;

/// Keeps at most `max` points, always including the first and last.
pub fn decimate(points: &[Vec2], max: usize) -> Vec<Vec2> {
    if points.len() <= max {
        return points.to_vec();
    }
    let step = (points.len() - 1).div_ceil(max - 1);
    let mut out: Vec<Vec2> = points.iter().step_by(step).copied().collect();
    if (points.len() - 1) % step != 0 {
        out.push(*points.last().unwrap());
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn render(params: &SystemParams, path: &[Vec2], anchor: Vec2, fit: Option<&StripFit>, metadata: &str) -> String {
    let pts = decimate(path, MAX_VERTICES);
    let lattice = params.lattice().expect("validated lattice");
    let pad = lattice.scale();
    let (mut x0, mut x1, mut y0, mut y1) = (anchor.x, anchor.x, anchor.y, anchor.y);
    for p in &pts {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let (x0, x1, y0, y1) = (x0 - pad, x1 + pad, y0 - pad, y1 + pad);

    // lattice cells near the path, or the whole box when it is small
    let mut cells = BTreeSet::new();
    if (x1 - x0) * (y1 - y0) / lattice.det().abs() <= MAX_OBSTACLES as f64 {
        lattice.for_each_in_box(x0, x1, y0, y1, |n, _| {
            cells.insert(n);
        });
    } else {
        for p in pts.iter().chain(std::iter::once(&anchor)) {
            let (c1, c2) = lattice.coords(*p);
            let (c1, c2) = (c1.floor() as i64, c2.floor() as i64);
            for d1 in -1..=2 {
                for d2 in -1..=2 {
                    cells.insert([c1 + d1, c2 + d2]);
                }
            }
            if cells.len() >= MAX_OBSTACLES {
                break;
            }
        }
    }

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{} {} {} {}" width="800" height="{}">"#,
        x0,
        -y1,
        x1 - x0,
        y1 - y0,
        (800.0 * (y1 - y0) / (x1 - x0)).round().clamp(100.0, 4000.0)
    );
    let _ = writeln!(s, "<metadata>{}</metadata>", escape(metadata));
    s.push_str("<g transform=\"scale(1,-1)\">\n");
    if let Some(f) = fit {
        let u = Vec2::new(f.theta.cos(), f.theta.sin());
        let z = Vec2::new(-u.y, u.x);
        let len = (x1 - x0).hypot(y1 - y0);
        let mid = Vec2::new(0.5 * (x0 + x1), 0.5 * (y0 + y1));
        let c = z * f.center_offset + u * mid.dot(u);
        let h = 0.5 * f.width.max(pad * 0.05);
        let corners = [c - u * len - z * h, c + u * len - z * h, c + u * len + z * h, c - u * len + z * h];
        let _ = writeln!(s, r##"<polygon class="strip" fill="#f4a261" fill-opacity="0.3" points="{}"/>"##, points(&corners));
    }
    s.push_str("<g class=\"obstacles\" fill=\"#264653\">\n");
    for n in &cells {
        let center = lattice.point(*n);
        if let Ok(c) = rectangle_corners(params.a, params.b, params.theta, center) {
            let _ = writeln!(s, r#"<polygon points="{}"/>"#, points(&c));
        }
    }
    s.push_str("</g>\n");
    if pts.len() >= 2 {
        let _ = writeln!(
            s,
            r##"<polyline class="trajectory" fill="none" stroke="#e63946" stroke-width="1" vector-effect="non-scaling-stroke" points="{}"/>"##,
            points(&pts)
        );
    }
    s.push_str("</g>\n</svg>\n");
    s
}

fn points(ps: &[Vec2]) -> String {
    let mut out = String::with_capacity(ps.len() * 24);
    for (i, p) in ps.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{},{}", p.x, p.y);
    }
    out
}

pub fn write(path: &Path, params: &SystemParams, vertices: &[Vec2], anchor: Vec2, fit: Option<&StripFit>, metadata: &str) -> std::io::Result<()> {
    std::fs::write(path, render(params, vertices, anchor, fit, metadata))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metadata_of(svg: &str) -> Option<String> {
        let a = svg.find("<metadata>")? + "<metadata>".len();
        let b = svg[a..].find("</metadata>")? + a;
        Some(svg[a..b].replace("&lt;", "<").replace("&gt;", ">").replace("&amp;", "&"))
    }

    fn params() -> SystemParams {
        SystemParams::new(Vec2::new(10.0, 0.0), Vec2::new(0.0, 10.0), 1.0, 1.0, 0.5236)
    }

    #[test]
    fn decimation_keeps_ends_and_cap() {
        let pts: Vec<Vec2> = (0..123_457).map(|i| Vec2::new(i as f64, 0.0)).collect();
        let d = decimate(&pts, MAX_VERTICES);
        assert!(d.len() <= MAX_VERTICES);
        assert_eq!(d[0], pts[0]);
        assert_eq!(*d.last().unwrap(), *pts.last().unwrap());
        assert_eq!(decimate(&pts[..10], MAX_VERTICES).len(), 10);
    }

    #[test]
    fn empty_path_draws_obstacles_only() {
        let svg = render(&params(), &[], Vec2::new(5.0, 5.0), None, "{}");
        assert!(svg.contains("class=\"obstacles\""));
        assert!(svg.contains("<polygon points="));
        assert!(!svg.contains("trajectory"));
    }

    #[test]
    fn metadata_round_trips() {
        let meta = serde_json::json!({ "params": params(), "note": "a<b & c" }).to_string();
        let svg = render(&params(), &[Vec2::ZERO, Vec2::new(1.0, 30.0)], Vec2::ZERO, None, &meta);
        let back: serde_json::Value = serde_json::from_str(&metadata_of(&svg).unwrap()).unwrap();
        let p: SystemParams = serde_json::from_value(back["params"].clone()).unwrap();
        assert_eq!(p, params());
        assert_eq!(back["note"], "a<b & c");
    }
}
