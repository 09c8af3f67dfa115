//! Planar primitives: vectors, direction angles, reflections, lattice reduction
//! and the tolerance policy shared by the tracers.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default relative geometric tolerance.
pub const EPS_GEOM: f64 = 1e-12;
/// Corner radius is this factor times `max(a, b)`.
pub const CORNER_FACTOR: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("lattice basis is degenerate (|det| = {det:e})")]
    DegenerateLattice { det: f64 },
    #[error("tilt angle {theta} must lie strictly inside (0, π/2); θ = 0 makes every trajectory a vertical line")]
    DegenerateAngle { theta: f64 },
    #[error("rectangle sides must be positive and finite (a = {a}, b = {b})")]
    BadSides { a: f64, b: f64 },
    #[error("invalid tolerance: {0}")]
    InvalidTolerance(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3d cross product.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm2(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Counterclockwise quarter turn.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn unit(self) -> Vec2 {
        self * (1.0 / self.norm())
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl SubAssign for Vec2 {
    fn sub_assign(&mut self, o: Vec2) {
        self.x -= o.x;
        self.y -= o.y;
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Direction angle in `[0, 2π)`, counterclockwise from the positive x-axis.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DirAngle(f64);

impl DirAngle {
    pub const UP: DirAngle = DirAngle(FRAC_PI_2);
    pub const DOWN: DirAngle = DirAngle(3.0 * FRAC_PI_2);

    pub fn new(phi: f64) -> Self {
        DirAngle(normalize_angle(phi))
    }

    pub fn vertical(up: bool) -> Self {
        if up {
            Self::UP
        } else {
            Self::DOWN
        }
    }

    pub fn phi(self) -> f64 {
        self.0
    }

    pub fn unit(self) -> Vec2 {
        let (s, c) = self.0.sin_cos();
        Vec2::new(c, s)
    }

    pub fn from_vec(v: Vec2) -> Self {
        DirAngle::new(v.angle())
    }

    pub fn reversed(self) -> Self {
        DirAngle::new(self.0 + std::f64::consts::PI)
    }

    pub fn is_up(self) -> bool {
        self == Self::UP
    }

    pub fn is_down(self) -> bool {
        self == Self::DOWN
    }
}

/// Reduce an angle to `[0, 2π)`.
pub fn normalize_angle(phi: f64) -> f64 {
    let r = phi.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Smallest absolute difference of two angles modulo `period`.
pub fn angle_dist(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).rem_euclid(period);
    d.min(period - d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub eps_geom: f64,
    pub eps_corner: f64,
}

impl Tolerance {
    pub fn new(eps_geom: f64, eps_corner: f64) -> Result<Self, GeomError> {
        if !(eps_geom > 0.0 && eps_geom < 1e-6) {
            return Err(GeomError::InvalidTolerance(format!(
                "eps_geom = {eps_geom} outside (0, 1e-6)"
            )));
        }
        if !(eps_corner > 0.0 && eps_corner.is_finite()) {
            return Err(GeomError::InvalidTolerance(format!(
                "eps_corner = {eps_corner} must be positive"
            )));
        }
        Ok(Tolerance {
            eps_geom,
            eps_corner,
        })
    }

    /// Defaults for an `a × b` obstacle.
    pub fn for_rectangle(a: f64, b: f64) -> Self {
        Tolerance {
            eps_geom: EPS_GEOM,
            eps_corner: CORNER_FACTOR * a.max(b),
        }
    }
}

/// Mirror the direction `d` across a line at `line_angle`: `2α − φ mod 2π`.
pub fn reflect_direction(d: DirAngle, line_angle: f64) -> DirAngle {
    DirAngle::new(2.0 * line_angle - d.phi())
}

/// 2×2 integer matrix, row-major.
pub type IMat2 = [[i64; 2]; 2];

pub const IDENTITY: IMat2 = [[1, 0], [0, 1]];

/// Saturates at the `i64` range.
pub fn imat_det(m: &IMat2) -> i64 {
    let d = m[0][0] as i128 * m[1][1] as i128 - m[0][1] as i128 * m[1][0] as i128;
    d.clamp(i64::MIN as i128, i64::MAX as i128) as i64
}

pub fn imat_mul(a: &IMat2, b: &IMat2) -> IMat2 {
    let mut r = [[0i64; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            r[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    r
}

/// `a·b` with wide intermediates, or `None` if an entry leaves `i64`.
pub fn imat_mul_checked(a: &IMat2, b: &IMat2) -> Option<IMat2> {
    let mut r = [[0i64; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let v = a[i][0] as i128 * b[0][j] as i128 + a[i][1] as i128 * b[1][j] as i128;
            r[i][j] = i64::try_from(v).ok()?;
        }
    }
    Some(r)
}

/// Inverse of a unimodular matrix. Panics if `det ≠ ±1`.
pub fn imat_inv(m: &IMat2) -> IMat2 {
    let d = imat_det(m);
    assert!(d == 1 || d == -1, "matrix {m:?} is not unimodular");
    [[d * m[1][1], -d * m[0][1]], [-d * m[1][0], d * m[0][0]]]
}

pub fn imat_transpose(m: &IMat2) -> IMat2 {
    [[m[0][0], m[1][0]], [m[0][1], m[1][1]]]
}

pub fn imat_apply(m: &IMat2, v: [i64; 2]) -> [i64; 2] {
    [
        m[0][0] * v[0] + m[0][1] * v[1],
        m[1][0] * v[0] + m[1][1] * v[1],
    ]
}

/// Lagrange–Gauss reduction. Returns `(e1', e2', M)` with `e1' = M₀₀e1 + M₀₁e2`
/// and `e2' = M₁₀e1 + M₁₁e2`, `‖e1'‖ ≤ ‖e2'‖ ≤ ‖e2' ± e1'‖`.
pub fn lattice_reduce(e1: Vec2, e2: Vec2) -> Result<(Vec2, Vec2, IMat2), GeomError> {
    let det = e1.cross(e2);
    if !(det.abs() >= EPS_GEOM * e1.norm() * e2.norm()) || !e1.is_finite() || !e2.is_finite() {
        return Err(GeomError::DegenerateLattice { det });
    }
    let comb = |m: [i64; 2]| e1 * m[0] as f64 + e2 * m[1] as f64;
    let mut m = IDENTITY;
    if e1.norm2() > e2.norm2() {
        m.swap(0, 1);
    }
    let mut b1 = comb(m[0]);
    let mut b2 = comb(m[1]);
    loop {
        let mu = (b1.dot(b2) / b1.norm2()).round();
        if mu != 0.0 {
            let k = mu as i64;
            m[1] = [m[1][0] - k * m[0][0], m[1][1] - k * m[0][1]];
            b2 = comb(m[1]);
        }
        if b2.norm2() >= b1.norm2() {
            break;
        }
        m.swap(0, 1);
        std::mem::swap(&mut b1, &mut b2);
    }
    Ok((b1, b2, m))
}

/// Corners of the `a × b` rectangle centered at `center` whose side of length
/// `a` makes the angle `theta` with the horizontal. Counterclockwise, starting
/// from the corner with the smallest y.
pub fn rectangle_corners(a: f64, b: f64, theta: f64, center: Vec2) -> Result<[Vec2; 4], GeomError> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(GeomError::BadSides { a, b });
    }
    if !(theta > 0.0 && theta < FRAC_PI_2) {
        return Err(GeomError::DegenerateAngle { theta });
    }
    let (s, c) = theta.sin_cos();
    let u = Vec2::new(c, s) * a;
    let n = Vec2::new(-s, c) * b;
    let low = center - (u + n) * 0.5;
    Ok([low, low + u, low + u + n, low + n])
}

/// A lattice together with a reduced basis used to enumerate lattice points in
/// vertical strips. Integer coordinates are always relative to the user basis.
#[derive(Debug, Clone)]
pub struct Lattice {
    pub e1: Vec2,
    pub e2: Vec2,
    /// Reduced basis and its coordinates in `(e1, e2)`.
    pub r1: Vec2,
    pub r2: Vec2,
    pub reduce: IMat2,
    det: f64,
    // walk basis: f1 has the larger |x|
    f1: Vec2,
    f2: Vec2,
    c1: [i64; 2],
    c2: [i64; 2],
    slope: f64,
    step: f64,
}

impl Lattice {
    pub fn new(e1: Vec2, e2: Vec2) -> Result<Self, GeomError> {
        let (r1, r2, reduce) = lattice_reduce(e1, e2)?;
        let (f1, f2, c1, c2) = if r1.x.abs() >= r2.x.abs() {
            (r1, r2, reduce[0], reduce[1])
        } else {
            (r2, r1, reduce[1], reduce[0])
        };
        let det = e1.cross(e2);
        Ok(Lattice {
            e1,
            e2,
            r1,
            r2,
            reduce,
            det,
            f1,
            f2,
            c1,
            c2,
            slope: f1.y / f1.x,
            step: f1.cross(f2) / f1.x,
        })
    }

    pub fn det(&self) -> f64 {
        self.det
    }

    /// `sqrt(|det|)`, the length scale of the lattice.
    pub fn scale(&self) -> f64 {
        self.det.abs().sqrt()
    }

    pub fn point(&self, n: [i64; 2]) -> Vec2 {
        self.e1 * n[0] as f64 + self.e2 * n[1] as f64
    }

    /// Real coordinates of `p` in the basis `(e1, e2)`.
    pub fn coords(&self, p: Vec2) -> (f64, f64) {
        (p.cross(self.e2) / self.det, self.e1.cross(p) / self.det)
    }

    /// Calls `f(n, λ)` for every lattice point `λ = n₁e1 + n₂e2` with
    /// `λ.x ∈ [x_lo, x_hi]` and `λ.y ∈ [y_lo, y_hi]` (possibly a few more).
    pub fn for_each_in_box(&self, x_lo: f64, x_hi: f64, y_lo: f64, y_hi: f64, mut f: impl FnMut([i64; 2], Vec2)) {
        let (kx_min, kx_max) = {
            let a = self.slope * x_lo;
            let b = self.slope * x_hi;
            (a.min(b), a.max(b))
        };
        let mut j_lo = (y_lo - kx_max) / self.step;
        let mut j_hi = (y_hi - kx_min) / self.step;
        if j_lo > j_hi {
            std::mem::swap(&mut j_lo, &mut j_hi);
        }
        // margin for the y spread contributed by rounding i to an integer
        let pad = (self.f1.y / self.step).abs() + 1.0;
        let j_lo = (j_lo - pad).floor() as i64;
        let j_hi = (j_hi + pad).ceil() as i64;
        for j in j_lo..=j_hi {
            let jf = j as f64;
            let mut i_lo = (x_lo - jf * self.f2.x) / self.f1.x;
            let mut i_hi = (x_hi - jf * self.f2.x) / self.f1.x;
            if i_lo > i_hi {
                std::mem::swap(&mut i_lo, &mut i_hi);
            }
            let i_lo = i_lo.ceil() as i64;
            let i_hi = i_hi.floor() as i64;
            for i in i_lo..=i_hi {
                let n = [i * self.c1[0] + j * self.c2[0], i * self.c1[1] + j * self.c2[1]];
                let p = self.point(n);
                if p.y >= y_lo && p.y <= y_hi && p.x >= x_lo && p.x <= x_hi {
                    f(n, p);
                }
            }
        }
    }

    /// Typical vertical gap between lattice points met by a vertical line; sets
    /// the window height for ray scans.
    pub fn vertical_step(&self) -> f64 {
        self.step.abs()
    }

    /// Finds the first lattice-periodic object met by the vertical ray from
    /// `(x, y0)`. Objects attached to `λ` live in `λ.x + [rx.0, rx.1]`, and
    /// `hit(n, λ)` returns the height where the ray meets the one at `λ`.
    /// Hits closer than `min_gap` are ignored; `None` if nothing is met within
    /// `max_dist`.
    #[allow(clippy::too_many_arguments)]
    pub fn scan_vertical<T>(
        &self,
        x: f64,
        y0: f64,
        up: bool,
        rx: (f64, f64),
        ry: (f64, f64),
        min_gap: f64,
        max_dist: f64,
        mut hit: impl FnMut([i64; 2], Vec2) -> Option<(f64, T)>,
    ) -> Option<(f64, T)> {
        let window = 4.0 * self.vertical_step() + (ry.1 - ry.0);
        let mut best: Option<(f64, T)> = None;
        let mut lo = 0.0;
        while lo <= max_dist {
            let hi = lo + window;
            let (ylo, yhi) = if up {
                (y0 + lo - ry.1, y0 + hi - ry.0)
            } else {
                (y0 - hi - ry.1, y0 - lo - ry.0)
            };
            self.for_each_in_box(x - rx.1, x - rx.0, ylo, yhi, |n, p| {
                if let Some((yh, t)) = hit(n, p) {
                    let d = if up { yh - y0 } else { y0 - yh };
                    if d > min_gap && best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                        best = Some((d, t));
                    }
                }
            });
            if let Some((d, _)) = &best {
                if *d <= hi {
                    return best;
                }
            }
            lo = hi;
        }
        best.filter(|(d, _)| *d <= max_dist)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_4, FRAC_PI_6, PI};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn reflect_vertical_across_pi_over_6() {
        let r = reflect_direction(DirAngle::UP, FRAC_PI_6);
        assert!(close(r.phi(), normalize_angle(-FRAC_PI_6), 1e-15));
        // mirror the unit vector directly
        let line = Vec2::new(FRAC_PI_6.cos(), FRAC_PI_6.sin());
        let v = DirAngle::UP.unit();
        let m = line * (2.0 * v.dot(line)) - v;
        assert!((m - r.unit()).norm() < 1e-15);
    }

    #[test]
    fn direction_on_mirror_is_fixed() {
        let d = DirAngle::new(FRAC_PI_4);
        assert!(close(reflect_direction(d, FRAC_PI_4).phi(), FRAC_PI_4, 1e-16));
    }

    #[test]
    fn parallel_and_perpendicular_mirrors() {
        for k in 0..50 {
            let alpha = 0.03 * k as f64 + 0.01;
            let up = DirAngle::UP;
            let t = reflect_direction(reflect_direction(up, alpha), alpha + PI);
            assert!(angle_dist(t.phi(), up.phi(), TAU) < 1e-14);
            let r = reflect_direction(reflect_direction(up, alpha), alpha + FRAC_PI_2);
            assert!(angle_dist(r.phi(), DirAngle::DOWN.phi(), TAU) < 1e-14);
        }
    }

    #[test]
    fn reduce_identity() {
        let (a, b, m) = lattice_reduce(Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)).unwrap();
        assert_eq!(a, Vec2::new(1.0, 0.0));
        assert_eq!(b, Vec2::new(0.0, 1.0));
        assert_eq!(m, IDENTITY);
    }

    #[test]
    fn reduce_skewed_square() {
        let (a, b, m) = lattice_reduce(Vec2::new(5.0, 1.0), Vec2::new(4.0, 1.0)).unwrap();
        assert_eq!(imat_det(&m).abs(), 1);
        let mut got = [a, b].map(|v| (v.x.abs().round() as i64, v.y.abs().round() as i64));
        got.sort();
        assert_eq!(got, [(0, 1), (1, 0)]);
        // brute-force oracle: shortest nonzero vector has norm 1
        let mut best = f64::INFINITY;
        for i in -10i64..=10 {
            for j in -10i64..=10 {
                if (i, j) != (0, 0) {
                    let v = Vec2::new(5.0, 1.0) * i as f64 + Vec2::new(4.0, 1.0) * j as f64;
                    best = best.min(v.norm());
                }
            }
        }
        assert!(close(a.norm(), best, 1e-12));
    }

    #[test]
    fn degenerate_lattice_rejected() {
        assert!(matches!(
            lattice_reduce(Vec2::new(1.0, 2.0), Vec2::new(2.0, 4.0)),
            Err(GeomError::DegenerateLattice { .. })
        ));
    }

    #[test]
    fn square_rotated_by_quarter_pi() {
        let s = 2f64.sqrt();
        let c = rectangle_corners(s, s, FRAC_PI_4, Vec2::ZERO).unwrap();
        let want = [(0.0, -1.0), (1.0, 0.0), (0.0, 1.0), (-1.0, 0.0)];
        for (p, w) in c.iter().zip(want) {
            assert!((*p - Vec2::new(w.0, w.1)).norm() < 1e-15);
        }
    }

    #[test]
    fn lowest_corner_height() {
        let (a, b, th) = (2.0, 1.0, FRAC_PI_6);
        let c = rectangle_corners(a, b, th, Vec2::ZERO).unwrap();
        // 0.5*(2*0.5 + 1*sqrt(3)/2) evaluated by hand
        assert!(close(c[0].y, -(1.0 + 0.75f64.sqrt() * 1.0) / 2.0, 1e-15));
        assert!(c.iter().skip(1).all(|p| p.y > c[0].y));
    }

    #[test]
    fn zero_angle_rejected() {
        assert!(matches!(
            rectangle_corners(1.0, 1.0, 0.0, Vec2::ZERO),
            Err(GeomError::DegenerateAngle { .. })
        ));
    }

    #[test]
    fn box_enumeration_matches_brute_force() {
        let lat = Lattice::new(Vec2::new(1.3, 0.2), Vec2::new(-0.4, 0.9)).unwrap();
        let mut got = Vec::new();
        lat.for_each_in_box(-2.0, 1.5, 3.0, 9.0, |n, _| got.push(n));
        got.sort();
        got.dedup();
        let mut want = Vec::new();
        for i in -40..=40 {
            for j in -40..=40 {
                let p = lat.point([i, j]);
                if (-2.0..=1.5).contains(&p.x) && (3.0..=9.0).contains(&p.y) {
                    want.push([i, j]);
                }
            }
        }
        want.sort();
        assert_eq!(got, want);
    }

    proptest! {
        #[test]
        fn reflect_is_involution(phi in 0.0..TAU, alpha in -10.0..10.0f64) {
            let d = DirAngle::new(phi);
            let back = reflect_direction(reflect_direction(d, alpha), alpha);
            prop_assert!(angle_dist(back.phi(), d.phi(), TAU) < 1e-13);
        }

        #[test]
        fn reduced_basis_spans_same_lattice(
            x1 in -5.0..5.0f64, y1 in -5.0..5.0f64, x2 in -5.0..5.0f64, y2 in -5.0..5.0f64
        ) {
            let e1 = Vec2::new(x1, y1);
            let e2 = Vec2::new(x2, y2);
            prop_assume!(e1.cross(e2).abs() > 1e-3);
            let (r1, r2, m) = lattice_reduce(e1, e2).unwrap();
            prop_assert_eq!(imat_det(&m).abs(), 1);
            // Lagrange conditions
            prop_assert!(r1.norm() <= r2.norm() * (1.0 + 1e-12));
            prop_assert!(r2.norm() <= (r2 + r1).norm() * (1.0 + 1e-12));
            prop_assert!(r2.norm() <= (r2 - r1).norm() * (1.0 + 1e-12));
            // e1, e2 have integer coordinates in the reduced basis
            let det = r1.cross(r2);
            for e in [e1, e2] {
                let a = e.cross(r2) / det;
                let b = r1.cross(e) / det;
                prop_assert!((a - a.round()).abs() < 1e-6 && (b - b.round()).abs() < 1e-6);
            }
        }

        #[test]
        fn corners_average_to_center(a in 0.1..5.0f64, b in 0.1..5.0f64, th in 0.01..1.56f64,
                                     cx in -10.0..10.0f64, cy in -10.0..10.0f64) {
            let c = rectangle_corners(a, b, th, Vec2::new(cx, cy)).unwrap();
            let m = (c[0] + c[1] + c[2] + c[3]) * 0.25;
            prop_assert!((m - Vec2::new(cx, cy)).norm() < 1e-12);
            prop_assert!(close(c[0].y, cy - (a * th.sin() + b * th.cos()) / 2.0, 1e-12));
        }
    }
}
