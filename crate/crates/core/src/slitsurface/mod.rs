//! The slit surface: each rectangle is replaced by a slit along its diagonal,
//! glued so that vertical trajectories agree with the plane model outside the
//! obstacles. The quotient by the lattice is a genus-one half-translation
//! surface with two simple poles and two simple zeros.

mod flow;
mod slit;
mod torus;

pub use flow::{
    compare_traces, gamma_t, trace_surface, EquivalenceReport, IHit, SurfaceTracer, SurfaceVisit,
};
pub use slit::{build_slit, census, slit_transition, PartKind, PartLayout, SlitCase, SlitSide, SlitSpec};
pub use torus::{build_torus, OEpsReport, SlitFamily, SlitTorus};

use std::ops::{Add, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{GeomError, Vec2};
use crate::windtree::{SystemParams, TraceError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurfaceError {
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("a cos θ = b sin θ within tolerance: the slit has no translation part")]
    DegenerateCase3,
    #[error("the slit does not fit inside any fundamental domain of the lattice")]
    SlitDoesNotEmbed,
    #[error("hit at {point:?} is within eps_corner of the singular point {singular}")]
    SingularHit { point: Vec2, singular: u8 },
    #[error("time {0} is beyond the traced range {1}")]
    TBeyondTrace(f64, f64),
    #[error("direction {0} is not vertical or does not match the slit side")]
    BadDirection(f64),
}

/// Homology class `n1 ζ1 + n2 ζ2`. Here `ζ1`, `ζ2` are the closed curves on
/// the torus represented by the lattice vectors `e1`, `e2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct HomologyVec {
    pub n1: i64,
    pub n2: i64,
}

impl HomologyVec {
    pub const ZERO: HomologyVec = HomologyVec { n1: 0, n2: 0 };

    pub const fn new(n1: i64, n2: i64) -> Self {
        HomologyVec { n1, n2 }
    }

    pub fn from_array(v: [i64; 2]) -> Self {
        HomologyVec { n1: v[0], n2: v[1] }
    }

    pub fn to_array(self) -> [i64; 2] {
        [self.n1, self.n2]
    }

    pub fn l1(self) -> i64 {
        self.n1.abs() + self.n2.abs()
    }
}

impl Add for HomologyVec {
    type Output = HomologyVec;
    fn add(self, o: HomologyVec) -> HomologyVec {
        HomologyVec::new(self.n1 + o.n1, self.n2 + o.n2)
    }
}

impl Sub for HomologyVec {
    type Output = HomologyVec;
    fn sub(self, o: HomologyVec) -> HomologyVec {
        HomologyVec::new(self.n1 - o.n1, self.n2 - o.n2)
    }
}

impl Neg for HomologyVec {
    type Output = HomologyVec;
    fn neg(self) -> HomologyVec {
        HomologyVec::new(-self.n1, -self.n2)
    }
}

/// Algebraic intersection number, normalized so that `ι(ζ1, ζ2) = 1`.
pub fn intersection_form(u: HomologyVec, v: HomologyVec) -> i64 {
    u.n1 * v.n2 - u.n2 * v.n1
}

/// Lattice displacement `n1 e1 + n2 e2`.
pub fn reconstruct_displacement(n: HomologyVec, params: &SystemParams) -> Vec2 {
    params.e1 * n.n1 as f64 + params.e2 * n.n2 as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn intersection_examples() {
        let z1 = HomologyVec::new(1, 0);
        let z2 = HomologyVec::new(0, 1);
        assert_eq!(intersection_form(z1, z2), 1);
        assert_eq!(intersection_form(z1, HomologyVec::new(3, 2)), 2);
    }

    #[test]
    fn displacement_examples() {
        let p = SystemParams::new(Vec2::new(1.0, 0.0), Vec2::new(0.2, 1.1), 0.1, 0.1, 0.3);
        assert_eq!(reconstruct_displacement(HomologyVec::ZERO, &p), Vec2::ZERO);
        let d = reconstruct_displacement(HomologyVec::new(2, -1), &p);
        assert!((d - Vec2::new(1.8, -1.1)).norm() < 1e-15);
    }

    proptest! {
        #[test]
        fn intersection_identities(n1 in -1000i64..1000, n2 in -1000i64..1000, m1 in -1000i64..1000, m2 in -1000i64..1000) {
            let g = HomologyVec::new(n1, n2);
            let h = HomologyVec::new(m1, m2);
            prop_assert_eq!(intersection_form(g, g), 0);
            prop_assert_eq!(intersection_form(HomologyVec::new(0, 1), g), -n1);
            prop_assert_eq!(intersection_form(HomologyVec::new(1, 0), g), n2);
            prop_assert_eq!(intersection_form(g, h), -intersection_form(h, g));
        }
    }
}
