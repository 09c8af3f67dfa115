//! Random parameter tuples and start points, for sweeps and statistical checks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geom::Vec2;
use crate::slitsurface::{build_torus, SlitTorus};
use crate::windtree::{admissible, PlaneTracer, SystemParams};

/// Ranges for random tuples. The lattice is a rotated, sheared unimodular
/// lattice: `e1 = R(φ)·(r, 0)`, `e2 = R(φ)·(s, 1/r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRanges {
    pub side: (f64, f64),
    pub theta: (f64, f64),
    pub stretch: (f64, f64),
    pub shear: (f64, f64),
    pub rotation: (f64, f64),
}

impl Default for SampleRanges {
    fn default() -> Self {
        SampleRanges {
            side: (0.15, 0.45),
            theta: (0.1, std::f64::consts::FRAC_PI_2 - 0.1),
            stretch: (0.85, 1.2),
            shear: (-0.35, 0.35),
            rotation: (-0.25, 0.25),
        }
    }
}

fn draw<R: Rng + ?Sized>(rng: &mut R, r: (f64, f64)) -> f64 {
    if r.0 < r.1 {
        rng.random_range(r.0..r.1)
    } else {
        r.0
    }
}

/// Gives up after this many rejected draws.
const MAX_TRIES: usize = 10_000;

/// Draws an admissible tuple whose slit is non-degenerate and embeds in a
/// fundamental domain.
pub fn random_admissible<R: Rng + ?Sized>(rng: &mut R, ranges: &SampleRanges) -> Option<SystemParams> {
    (0..MAX_TRIES).find_map(|_| {
        let p = draw_params(rng, ranges);
        let ok = admissible(&p).unwrap_or(false) && build_torus(&p, 0.0).is_ok();
        ok.then_some(p)
    })
}

/// Draws a tuple whose quotient torus lies in the open set for `epsilon`.
pub fn random_o_eps<R: Rng + ?Sized>(
    rng: &mut R,
    ranges: &SampleRanges,
    epsilon: f64,
) -> Option<(SystemParams, SlitTorus)> {
    (0..MAX_TRIES).find_map(|_| {
        let p = draw_params(rng, ranges);
        if !admissible(&p).unwrap_or(false) {
            return None;
        }
        build_torus(&p, epsilon).ok().filter(|t| t.in_o_eps()).map(|t| (p, t))
    })
}

fn draw_params<R: Rng + ?Sized>(rng: &mut R, ranges: &SampleRanges) -> SystemParams {
    let r = draw(rng, ranges.stretch);
    let s = draw(rng, ranges.shear);
    let phi = draw(rng, ranges.rotation);
    let e1 = Vec2::new(r, 0.0).rotate(phi);
    let e2 = Vec2::new(s, 1.0 / r).rotate(phi);
    SystemParams::new(e1, e2, draw(rng, ranges.side), draw(rng, ranges.side), draw(rng, ranges.theta))
}

/// Uniform start point in the cell `[0,1)·e1 + [0,1)·e2` outside every
/// obstacle (and off their boundaries).
pub fn random_start<R: Rng + ?Sized>(rng: &mut R, params: &SystemParams) -> Option<Vec2> {
    (0..MAX_TRIES).find_map(|_| {
        let p = params.e1 * rng.random_range(0.0..1.0) + params.e2 * rng.random_range(0.0..1.0);
        PlaneTracer::new(*params, p, true).ok().map(|_| p)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn draws_are_admissible_and_unimodular() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let p = random_admissible(&mut rng, &SampleRanges::default()).unwrap();
            assert!(admissible(&p).unwrap());
            assert!((p.e1.cross(p.e2) - 1.0).abs() < 1e-12);
            let s = random_start(&mut rng, &p).unwrap();
            assert!(PlaneTracer::new(p, s, false).is_ok());
        }
    }

    #[test]
    fn o_eps_draws_are_members() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let (_, t) = random_o_eps(&mut rng, &SampleRanges::default(), 0.01).unwrap();
            assert!(t.o_eps.member);
        }
    }

    #[test]
    fn seeding_is_reproducible() {
        let a = random_admissible(&mut ChaCha8Rng::seed_from_u64(9), &SampleRanges::default());
        let b = random_admissible(&mut ChaCha8Rng::seed_from_u64(9), &SampleRanges::default());
        assert_eq!(a, b);
    }
}
