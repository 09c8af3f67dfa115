use serde::{Deserialize, Serialize};

use super::RenormError;
use crate::geom::Vec2;
use crate::slitsurface::{SlitTorus, SurfaceError, SurfaceTracer};
use crate::windtree::EventKind;

/// Horizontal segment leaving a zero of angle 3π to the right, trimmed at
/// the last first hit of the vertical separatrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransversalSegment {
    /// Singular point the segment starts from (3 = right slit end).
    pub base_singularity: u8,
    /// Left end relative to the lattice point.
    pub base: Vec2,
    pub length: f64,
    /// Sorted first-hit offsets of the separatrices; the last equals `length`.
    pub marked_points: Vec<f64>,
    /// Number of separatrix germs flowed.
    pub germs: usize,
}

/// Singular points and outgoing vertical directions, relative to the lattice
/// point: slit ends (both directions), split points and rotation midpoints
/// (one direction each, away from the slit face they sit on).
pub(crate) fn separatrix_germs(torus: &SlitTorus) -> Vec<(Vec2, bool)> {
    let s = &torus.slit;
    vec![
        (s.left(), true),
        (s.left(), false),
        (s.right(), true),
        (s.right(), false),
        (s.point_at(s.bottom_split), false),
        (s.point_at(s.top_split), true),
        (s.point_at(s.bottom_center), false),
        (s.point_at(s.top_center), true),
    ]
}

/// Longest admissible segment before trimming: it must stay inside the
/// domain cell of its lattice point and avoid every slit.
fn initial_length(torus: &SlitTorus, base: Vec2, cap: f64) -> Result<f64, RenormError> {
    let lat = torus.params.lattice().map_err(SurfaceError::from)?;
    let s = &torus.slit;
    let mut len = cap;
    // distance to the cell boundary along the horizontal
    let u1 = torus.u1();
    let u2 = torus.u2();
    let d = u1.cross(u2);
    let p = base - torus.domain_origin;
    let (a, b) = (p.cross(u2) / d, u1.cross(p) / d);
    // d/dx of the cell coordinates
    let (da, db) = (Vec2::new(1.0, 0.0).cross(u2) / d, u1.cross(Vec2::new(1.0, 0.0)) / d);
    for (c, dc) in [(a, da), (b, db)] {
        if dc > 0.0 {
            len = len.min((1.0 - c) / dc);
        } else if dc < 0.0 {
            len = len.min(-c / dc);
        }
    }
    // first slit met by the horizontal ray
    let (ylo, yhi) = (s.left().y.min(s.right().y), s.left().y.max(s.right().y));
    lat.for_each_in_box(base.x - s.right().x, base.x + len - s.left().x, base.y - yhi, base.y - ylo, |idx, q| {
        if idx == [0, 0] {
            return;
        }
        // intersection of y = base.y with the slit at q
        let x = s.left().x + (base.y - q.y - s.left().y) / s.slope;
        if x >= s.left().x && x <= s.right().x {
            let gap = q.x + x - base.x;
            if gap > 0.0 {
                len = len.min(gap);
            }
        }
    });
    if !(len > 0.0) {
        return Err(RenormError::DegenerateSlit);
    }
    Ok(len * 0.999)
}

/// Flows one separatrix to its first hit on the segment `[base, base+len]`.
pub(crate) fn first_hit(
    torus: &SlitTorus,
    start: Vec2,
    up: bool,
    base: Vec2,
    len: f64,
    max_visits: usize,
) -> Result<f64, RenormError> {
    let mut tr = SurfaceTracer::unchecked(torus, start, up)?
        .with_skip([0, 0])
        .with_transversal(base, len);
    for _ in 0..max_visits {
        let mut hit = None;
        let v = tr.visit_with(
            |_, _| {},
            |h| {
                if hit.is_none() {
                    hit = Some(h.offset);
                }
            },
        )?;
        if let Some(off) = hit {
            return Ok(off);
        }
        if v.event.kind == EventKind::CornerStop {
            return Err(RenormError::SaddleConnectionSuspected);
        }
    }
    Err(RenormError::NonReturningOrbit(max_visits))
}

/// Builds the transversal from the right slit end. `cap` bounds the initial
/// length (before trimming) in length units.
pub fn build_transversal(torus: &SlitTorus) -> Result<TransversalSegment, RenormError> {
    build_transversal_capped(torus, 0.5 * torus.u1().norm().min(torus.u2().norm()))
}

pub fn build_transversal_capped(torus: &SlitTorus, cap: f64) -> Result<TransversalSegment, RenormError> {
    let base = torus.slit.right();
    let len0 = initial_length(torus, base, cap)?;
    let germs = separatrix_germs(torus);
    let mut marked = Vec::with_capacity(germs.len());
    for &(p, up) in &germs {
        marked.push(first_hit(torus, p, up, base, len0, 1_000_000)?);
    }
    marked.sort_by(|a, b| a.total_cmp(b));
    let length = *marked.last().expect("eight germs");
    let tiny = 1e-9 * length;
    if marked[0] <= tiny {
        return Err(RenormError::SaddleConnectionSuspected);
    }
    Ok(TransversalSegment {
        base_singularity: 3,
        base,
        length,
        marked_points: marked,
        germs: germs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slitsurface::build_torus;
    use crate::windtree::SystemParams;

    fn generic() -> SlitTorus {
        let p = SystemParams::new(Vec2::new(1.03, 0.17), Vec2::new(-0.31, 0.98), 0.31, 0.22, 0.61);
        build_torus(&p, 0.01).unwrap()
    }

    #[test]
    fn germ_count_matches_census() {
        let t = generic();
        // one vertical germ per π of cone angle
        let total: u32 = t.census.iter().sum();
        assert_eq!(separatrix_germs(&t).len() as u32, total);
        let seg = build_transversal(&t).unwrap();
        assert_eq!(seg.marked_points.len(), 8);
        assert!(seg.marked_points.windows(2).all(|w| w[0] <= w[1]));
        assert!(seg.marked_points[0] > 0.0);
        assert_eq!(*seg.marked_points.last().unwrap(), seg.length);
    }
}
