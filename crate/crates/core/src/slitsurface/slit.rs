use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::SurfaceError;
use crate::geom::{DirAngle, Vec2};
use crate::windtree::{Obstacle, SystemParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlitCase {
    /// `b sin θ < a cos θ`
    Case1,
    /// `b sin θ > a cos θ`
    Case2,
    /// `a cos θ = b sin θ`; never built, reported as degenerate.
    Case3,
}

/// Face of the slit: a ray going up meets the `Below` face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlitSide {
    Above,
    Below,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartKind {
    Translation,
    Rotation,
}

/// Which gluing each face carries on its left and right sub-segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartLayout {
    pub bottom: [PartKind; 2],
    pub top: [PartKind; 2],
}

impl PartLayout {
    /// The only place the case → layout table lives.
    pub fn for_case(case: SlitCase) -> Option<PartLayout> {
        use PartKind::*;
        match case {
            SlitCase::Case1 => Some(PartLayout {
                bottom: [Rotation, Translation],
                top: [Translation, Rotation],
            }),
            SlitCase::Case2 => Some(PartLayout {
                bottom: [Translation, Rotation],
                top: [Rotation, Translation],
            }),
            SlitCase::Case3 => None,
        }
    }
}

/// The slit attached to every lattice point. Horizontal positions are
/// relative to the lattice point (the rectangle's center).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlitSpec {
    pub case: SlitCase,
    /// Angle with the vertical.
    pub eta: f64,
    pub length: f64,
    pub x_len: f64,
    pub y_len: f64,
    /// Left and right endpoint: the diagonal avoiding the lowest corner.
    pub endpoints: [Vec2; 2],
    pub part_layout: PartLayout,
    /// Abscissa where each face switches from its left to its right part.
    pub bottom_split: f64,
    pub top_split: f64,
    /// Centers of the bottom and top rotation parts (lowest and highest corner).
    pub bottom_center: f64,
    pub top_center: f64,
    /// Horizontal jump from the bottom translation part to the top one.
    pub shift: f64,
    pub slope: f64,
    pub eps_corner: f64,
}

pub fn build_slit(params: &SystemParams) -> Result<SlitSpec, SurfaceError> {
    params.validate()?;
    let o = Obstacle::new(params)?;
    let (a, b, th) = (params.a, params.b, params.theta);
    let length = a.hypot(b);
    let gap = a * o.cos - b * o.sin;
    if gap.abs() < params.tolerance().eps_geom * length {
        return Err(SurfaceError::DegenerateCase3);
    }
    let case = if gap > 0.0 { SlitCase::Case1 } else { SlitCase::Case2 };
    let layout = PartLayout::for_case(case).expect("non-degenerate case");
    let eta = th + (a / b).atan();
    // closed forms with the 1/|sin η| factor written as sqrt(1 + cot² η)
    let stretch = (1.0 + (1.0 / eta.tan()).powi(2)).sqrt();
    let (x_len, y_len) = match case {
        SlitCase::Case1 => (gap * stretch, 2.0 * b * o.sin * stretch),
        _ => (-gap * stretch, 2.0 * a * o.cos * stretch),
    };
    let (l, r) = (o.left(), o.right());
    let (cx, tx) = (o.low().x, o.top().x);
    let bottom_split = match layout.bottom[0] {
        PartKind::Rotation => 2.0 * cx - l.x,
        PartKind::Translation => 2.0 * cx - r.x,
    };
    let top_split = match layout.top[0] {
        PartKind::Rotation => 2.0 * tx - l.x,
        PartKind::Translation => 2.0 * tx - r.x,
    };
    let bottom_trans_start = if layout.bottom[0] == PartKind::Translation { l.x } else { bottom_split };
    let top_trans_start = if layout.top[0] == PartKind::Translation { l.x } else { top_split };
    Ok(SlitSpec {
        case,
        eta,
        length,
        x_len,
        y_len,
        endpoints: [l, r],
        part_layout: layout,
        bottom_split,
        top_split,
        bottom_center: cx,
        top_center: tx,
        shift: top_trans_start - bottom_trans_start,
        slope: (r.y - l.y) / (r.x - l.x),
        eps_corner: params.tolerance().eps_corner,
    })
}

impl SlitSpec {
    pub fn left(&self) -> Vec2 {
        self.endpoints[0]
    }

    pub fn right(&self) -> Vec2 {
        self.endpoints[1]
    }

    pub fn y_at(&self, x: f64) -> f64 {
        self.left().y + (x - self.left().x) * self.slope
    }

    pub fn point_at(&self, x: f64) -> Vec2 {
        Vec2::new(x, self.y_at(x))
    }

    pub fn split(&self, side: SlitSide) -> f64 {
        match side {
            SlitSide::Below => self.bottom_split,
            SlitSide::Above => self.top_split,
        }
    }

    pub fn rotation_center(&self, side: SlitSide) -> f64 {
        match side {
            SlitSide::Below => self.bottom_center,
            SlitSide::Above => self.top_center,
        }
    }

    /// Part id (0 bottom-left, 1 bottom-right, 2 top-left, 3 top-right) and
    /// its gluing.
    pub fn part(&self, x: f64, side: SlitSide) -> (u8, PartKind) {
        let right = x >= self.split(side);
        let kinds = match side {
            SlitSide::Below => self.part_layout.bottom,
            SlitSide::Above => self.part_layout.top,
        };
        let base = if side == SlitSide::Below { 0 } else { 2 };
        (base + right as u8, kinds[right as usize])
    }

    /// Horizontal extent of the slit.
    pub fn width(&self) -> f64 {
        self.right().x - self.left().x
    }

    /// Singular abscissas on one face: the two slit endpoints and the split
    /// point (ids 0, 1, 2).
    pub fn singular_on(&self, side: SlitSide) -> [f64; 3] {
        [self.left().x, self.right().x, self.split(side)]
    }
}

/// Crosses the slit: `hit` lies on the given face (relative to the lattice
/// point) and `dir` is the arriving vertical direction. Returns the point
/// where the trajectory continues and its new direction; the new direction
/// is up iff the trajectory leaves from the `Above` face.
pub fn slit_transition(
    spec: &SlitSpec,
    hit: Vec2,
    side: SlitSide,
    dir: DirAngle,
) -> Result<(Vec2, DirAngle), SurfaceError> {
    let up = match side {
        SlitSide::Below => true,
        SlitSide::Above => false,
    };
    if dir != DirAngle::vertical(up) {
        return Err(SurfaceError::BadDirection(dir.phi()));
    }
    let x = hit.x;
    for (id, s) in spec.singular_on(side).into_iter().enumerate() {
        if (x - s).abs() < spec.eps_corner {
            return Err(SurfaceError::SingularHit { point: hit, singular: id as u8 });
        }
    }
    if x < spec.left().x || x > spec.right().x {
        return Err(SurfaceError::SingularHit { point: hit, singular: if x < spec.left().x { 0 } else { 1 } });
    }
    let (_, kind) = spec.part(x, side);
    let (nx, ndir) = match kind {
        PartKind::Translation => {
            let s = if up { spec.shift } else { -spec.shift };
            (x + s, dir)
        }
        PartKind::Rotation => (2.0 * spec.rotation_center(side) - x, dir.reversed()),
    };
    Ok((spec.point_at(nx), ndir))
}

/// Cone angles of the quotient surface in units of π, sorted.
pub fn census(spec: &SlitSpec) -> Vec<u32> {
    // vertices: 0 = left end, 1 = right end, 2 = bottom split, 3 = top split,
    // 4 = bottom rotation midpoint, 5 = top rotation midpoint
    let angle = [2u32, 2, 1, 1, 1, 1];
    let mut parent = [0usize, 1, 2, 3, 4, 5];
    fn find(p: &mut [usize; 6], mut i: usize) -> usize {
        while p[i] != i {
            i = p[i];
        }
        i
    }
    let mut union = |a: usize, b: usize| {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
        }
    };
    let lay = spec.part_layout;
    // endpoints of the part on face `split_id` at position `right`
    let ends = |split_id: usize, right: bool| if right { (split_id, 1) } else { (0, split_id) };
    let mut trans = Vec::new();
    for (split_id, kinds) in [(2usize, lay.bottom), (3usize, lay.top)] {
        for (pos, k) in kinds.iter().enumerate() {
            let (lo, hi) = ends(split_id, pos == 1);
            match k {
                PartKind::Rotation => union(lo, hi),
                PartKind::Translation => trans.push((lo, hi)),
            }
        }
    }
    if let [(a0, a1), (b0, b1)] = trans[..] {
        union(a0, b0);
        union(a1, b1);
    }
    let mut totals = [0u32; 6];
    for (i, &a) in angle.iter().enumerate() {
        let r = find(&mut parent, i);
        totals[r] += a;
    }
    let mut out: Vec<u32> = totals.into_iter().filter(|&t| t > 0).collect();
    out.sort_unstable();
    out
}

impl SlitSpec {
    pub fn census_radians(&self) -> Vec<f64> {
        census(self).into_iter().map(|k| k as f64 * PI).collect()
    }
}
