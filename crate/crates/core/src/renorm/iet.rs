use serde::{Deserialize, Serialize};

use super::exact::ExactIet;
use super::transversal::TransversalSegment;
use super::RenormError;
use crate::geom::{imat_inv, imat_mul_checked, IMat2, Lattice, Vec2, IDENTITY};
use crate::slitsurface::{HomologyVec, SlitSide, SlitSpec, SlitTorus, SurfaceError};

/// One branch of a first-return map on `I × {copies}`. Copy 0 holds points
/// leaving `I` upward, copy 1 those leaving downward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub copy: u8,
    pub lo: f64,
    pub hi: f64,
    pub img_copy: u8,
    pub img_lo: f64,
    pub img_hi: f64,
    pub flip: bool,
    pub return_homology: HomologyVec,
    pub return_vertical_length: f64,
}

impl Branch {
    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }

    pub fn apply(&self, s: f64) -> f64 {
        if self.flip {
            self.img_hi - (s - self.lo)
        } else {
            self.img_lo + (s - self.lo)
        }
    }
}

/// First-return map of the vertical flow to a horizontal segment. With two
/// copies, the map on `I × {up, down}` is a linear involution; orientation
/// flips exactly when the copy changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IETWithFlips {
    pub total_length: f64,
    pub copies: u8,
    /// Sorted by `(copy, lo)`.
    pub branches: Vec<Branch>,
}

impl IETWithFlips {
    /// Rotation `s ↦ s − α mod 1` realized by the linear flow on the torus
    /// with `e1 = (1, 0)`, `e2 = (α, 1)` and `I = [0, 1) × {0}`.
    pub fn rotation(alpha: f64) -> IETWithFlips {
        assert!(alpha > 0.0 && alpha < 1.0);
        IETWithFlips {
            total_length: 1.0,
            copies: 1,
            branches: vec![
                Branch {
                    copy: 0,
                    lo: 0.0,
                    hi: alpha,
                    img_copy: 0,
                    img_lo: 1.0 - alpha,
                    img_hi: 1.0,
                    flip: false,
                    return_homology: HomologyVec::new(-1, 1),
                    return_vertical_length: 1.0,
                },
                Branch {
                    copy: 0,
                    lo: alpha,
                    hi: 1.0,
                    img_copy: 0,
                    img_lo: 0.0,
                    img_hi: 1.0 - alpha,
                    flip: false,
                    return_homology: HomologyVec::new(0, 1),
                    return_vertical_length: 1.0,
                },
            ],
        }
    }

    pub fn branch_at(&self, copy: u8, s: f64) -> Option<&Branch> {
        let i = self.branches.partition_point(|b| b.copy < copy || (b.copy == copy && b.lo <= s));
        let b = self.branches.get(i.checked_sub(1)?)?;
        (b.copy == copy && s >= b.lo && s < b.hi).then_some(b)
    }

    /// One return: new copy, position and the branch used.
    pub fn apply(&self, copy: u8, s: f64) -> Option<(u8, f64, &Branch)> {
        let b = self.branch_at(copy, s)?;
        Some((b.img_copy, b.apply(s), b))
    }

    pub fn has_flips(&self) -> bool {
        self.branches.iter().any(|b| b.flip)
    }

    pub fn heights(&self) -> (f64, f64) {
        self.branches.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), b| {
            (lo.min(b.return_vertical_length), hi.max(b.return_vertical_length))
        })
    }

    /// Domains and images tile `[0, total_length)` on every copy, to
    /// `rel_tol` relative.
    pub fn check_partition(&self, rel_tol: f64) -> bool {
        let tol = rel_tol * self.total_length;
        for c in 0..self.copies {
            let mut d: Vec<(f64, f64)> = self.branches.iter().filter(|b| b.copy == c).map(|b| (b.lo, b.hi)).collect();
            let mut i: Vec<(f64, f64)> =
                self.branches.iter().filter(|b| b.img_copy == c).map(|b| (b.img_lo, b.img_hi)).collect();
            for v in [&mut d, &mut i] {
                v.sort_by(|p, q| p.0.total_cmp(&q.0));
                let mut at = 0.0;
                for &(lo, hi) in v.iter() {
                    if (lo - at).abs() > tol || hi <= lo {
                        return false;
                    }
                    at = hi;
                }
                if (at - self.total_length).abs() > tol {
                    return false;
                }
            }
        }
        self.branches.iter().all(|b| ((b.img_hi - b.img_lo) - b.len()).abs() <= tol && b.return_vertical_length > 0.0)
    }

    /// Follows `s` on `copy` until it lands in `[0, r)`; returns the landing
    /// state, the summed homology and the number of returns.
    pub fn return_to(&self, copy: u8, s: f64, r: f64, max_word: usize) -> Option<(u8, f64, HomologyVec, usize)> {
        let (mut c, mut x) = (copy, s);
        let mut h = HomologyVec::ZERO;
        for n in 1..=max_word {
            let (c2, x2, b) = self.apply(c, x)?;
            h = h + b.return_homology;
            c = c2;
            x = x2;
            if x < r {
                return Some((c, x, h, n));
            }
        }
        None
    }
}

/// Loops closed along `I` by the return words (at most 16 returns) started
/// at the middle of each branch, with their vertical lengths.
pub fn loop_candidates(iet: &ExactIet) -> Vec<(HomologyVec, f64)> {
    let mut cands: Vec<(HomologyVec, f64)> = Vec::new();
    for b in &iet.branches {
        let (mut c, mut x) = (b.copy, b.lo + (b.hi - b.lo) / 2);
        let mut h = HomologyVec::ZERO;
        let mut height = 0.0;
        for _ in 0..16 {
            let Some((c2, x2, br)) = iet.apply(c, x) else { break };
            h = h + br.return_homology;
            height += br.return_vertical_length;
            if h != HomologyVec::ZERO && !cands.iter().any(|c| c.0 == h && c.1 <= height) {
                cands.push((h, height));
            }
            c = c2;
            x = x2;
        }
    }
    cands
}

/// Candidate generator: class, vertical length and horizontal closing
/// length of its loop representative.
type Cand = (HomologyVec, f64, f64);

/// Sums and differences of two candidates.
fn with_sums(cands: &[Cand]) -> Vec<Cand> {
    let mut out = cands.to_vec();
    for i in 0..cands.len() {
        for j in i + 1..cands.len() {
            for h in [cands[i].0 + cands[j].0, cands[i].0 - cands[j].0] {
                if h != HomologyVec::ZERO {
                    out.push((h, cands[i].1 + cands[j].1, cands[i].2 + cands[j].2));
                }
            }
        }
    }
    out
}

fn primitive(h: HomologyVec) -> bool {
    let (mut a, mut b) = (h.n1.abs(), h.n2.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a == 1
}

/// One candidate per class up to sign, the cheapest with its traced
/// orientation, sorted by cost and cut to `keep`.
fn prune(cands: &[Cand], cost: impl Fn(&Cand) -> f64, keep: usize) -> Vec<Cand> {
    let class = |h: HomologyVec| if h.n1 < 0 || (h.n1 == 0 && h.n2 < 0) { -h } else { h };
    let mut v: Vec<(f64, HomologyVec, Cand)> = cands.iter().map(|c| (cost(c), class(c.0), *c)).collect();
    v.sort_by(|x, y| (x.1.n1, x.1.n2).cmp(&(y.1.n1, y.1.n2)).then(x.0.total_cmp(&y.0)));
    v.dedup_by(|x, y| x.1 == y.1);
    v.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1.n1, x.1.n2).cmp(&(y.1.n1, y.1.n2))));
    v.truncate(keep);
    v.into_iter().map(|x| x.2).collect()
}

/// Pair with `det = ±1` minimizing the larger cost. `cands` must be sorted by
/// cost.
fn best_pair(cands: &[Cand], cost: impl Fn(&Cand) -> f64) -> Option<LevelBasis> {
    let costs: Vec<f64> = cands.iter().map(&cost).collect();
    let mut best: Option<(f64, usize, usize)> = None;
    for i in 0..cands.len() {
        if best.is_some_and(|(bc, _, _)| costs[i] >= bc) {
            break;
        }
        if !primitive(cands[i].0) {
            continue;
        }
        for j in 0..cands.len() {
            let m = costs[i].max(costs[j]);
            if best.is_some_and(|(bc, _, _)| m >= bc) {
                break;
            }
            let (u, w) = (cands[i].0, cands[j].0);
            let det = u.n1 as i128 * w.n2 as i128 - u.n2 as i128 * w.n1 as i128;
            if det.abs() == 1 {
                best = Some((m, i, j));
            }
        }
    }
    best.map(|(m, i, j)| {
        let (i, j) = if costs[i] <= costs[j] { (i, j) } else { (j, i) };
        LevelBasis {
            rows: [cands[i].0.to_array(), cands[j].0.to_array()],
            heights: [cands[i].1, cands[j].1],
            closing: [cands[i].2, cands[j].2],
            cost: m,
        }
    })
}

/// `(g, x, y)` with `a·x + b·y = g = gcd(a, b)`.
fn ext_gcd(a: i64, b: i64) -> (i64, i64, i64) {
    if b == 0 {
        (a.signum() * a, a.signum(), 0)
    } else {
        let (g, x, y) = ext_gcd(b, a % b);
        (g, y, x - (a / b) * y)
    }
}

/// Completes the cheapest primitive candidate to a basis using `prev`: the
/// second generator is the completion closest to the span of `v` in `prev`
/// coordinates, priced as the matching combination of the old generators.
fn complete(cands: &[Cand], prev: &LevelBasis, cost: impl Fn(&Cand) -> f64) -> Option<LevelBasis> {
    let v = cands.iter().filter(|c| primitive(c.0)).min_by(|a, b| cost(a).total_cmp(&cost(b)))?;
    let inv = imat_inv(&prev.rows);
    // v = x·p0 + y·p1
    let h = v.0.to_array();
    let [x, y] = imat_mul_checked(&[h, [0, 0]], &inv)?[0];
    let (g, s, t) = ext_gcd(x, y);
    if g != 1 {
        return None;
    }
    // x·t' − y·u' = 1 with (u', t') = (−t, s)
    let (mut u, mut w) = (-t, s);
    let (xf, yf) = (x as f64, y as f64);
    let m = ((u as f64 * xf + w as f64 * yf) / (xf * xf + yf * yf)).round() as i64;
    u = u.checked_sub(m.checked_mul(x)?)?;
    w = w.checked_sub(m.checked_mul(y)?)?;
    let p = &prev.rows;
    let second = imat_mul_checked(&[[u, w], [0, 0]], p)?[0];
    let second = HomologyVec::new(second[0], second[1]);
    let (ua, wa) = (u.unsigned_abs() as f64, w.unsigned_abs() as f64);
    let c2 = (second, ua * prev.heights[0] + wa * prev.heights[1], ua * prev.closing[0] + wa * prev.closing[1]);
    Some(LevelBasis {
        rows: [v.0.to_array(), second.to_array()],
        heights: [v.1, c2.1],
        closing: [v.2, c2.2],
        cost: cost(v).max(cost(&c2)),
    })
}

/// Generators of homology for one level, as rows in `(e1, e2)` coordinates,
/// with the vertical and horizontal lengths of their loop representatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelBasis {
    pub rows: IMat2,
    pub heights: [f64; 2],
    pub closing: [f64; 2],
    /// Larger rescaled length of the two generators.
    pub cost: f64,
}

/// Unimodular level basis. Candidates are the loops of the current level and
/// their sums and differences; the generators of `prev` are added only when
/// those do not span. A loop costs its length on the surface rescaled so
/// that `I` has length `l0` again. The pair with `det = ±1` and the smallest
/// larger cost wins.
pub fn level_basis_from(iet: &ExactIet, prev: Option<&LevelBasis>, l0: f64) -> Option<LevelBasis> {
    let l = iet.length();
    let cost = |c: &Cand| c.1 * l / l0 + c.2 * l0 / l;
    let loops: Vec<Cand> = loop_candidates(iet).into_iter().map(|(h, v)| (h, v, l)).collect();
    let mut cands = prune(&loops, cost, 64);
    if let Some(b) = best_pair(&cands, cost) {
        return Some(b);
    }
    let sums = prune(&with_sums(&cands[..cands.len().min(40)]), cost, usize::MAX);
    if let Some(b) = best_pair(&sums, cost) {
        return Some(b);
    }
    let p = prev?;
    let n = cands.len();
    for i in 0..2 {
        cands.push((HomologyVec::from_array(p.rows[i]), p.heights[i], p.closing[i]));
    }
    let with_prev = prune(&cands, cost, usize::MAX);
    best_pair(&with_prev, cost).or_else(|| complete(&cands[..n], p, cost))
}

pub fn level_basis(iet: &IETWithFlips) -> Option<IMat2> {
    level_basis_from(&ExactIet::from_float(iet), None, iet.total_length).map(|b| b.rows)
}

// ---------------------------------------------------------------------------
// Level 0: propagate whole intervals of leaves through the slits.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Obj {
    Slit([i64; 2]),
    Seg([i64; 2]),
}

struct Geo<'a> {
    lat: Lattice,
    s: &'a SlitSpec,
    base: Vec2,
    len: f64,
    scale: f64,
}

impl Geo<'_> {
    fn x_range(&self, o: Obj) -> (f64, f64) {
        match o {
            Obj::Slit(n) => {
                let p = self.lat.point(n);
                (p.x + self.s.left().x, p.x + self.s.right().x)
            }
            Obj::Seg(n) => {
                let p = self.lat.point(n);
                (p.x + self.base.x, p.x + self.base.x + self.len)
            }
        }
    }

    /// The object as the line `y = g·x + h`.
    fn line(&self, o: Obj) -> (f64, f64) {
        match o {
            Obj::Slit(n) => {
                let p = self.lat.point(n);
                let l = self.s.left();
                (self.s.slope, p.y + l.y - self.s.slope * (p.x + l.x))
            }
            Obj::Seg(n) => (0.0, self.lat.point(n).y + self.base.y),
        }
    }

    fn candidates(&self, x0: f64, x1: f64, ylo: f64, yhi: f64, out: &mut Vec<Obj>) {
        out.clear();
        let s = self.s;
        let (sy0, sy1) = (s.left().y.min(s.right().y), s.left().y.max(s.right().y));
        self.lat.for_each_in_box(x0 - s.right().x, x1 - s.left().x, ylo - sy1, yhi - sy0, |n, _| {
            out.push(Obj::Slit(n));
        });
        self.lat.for_each_in_box(x0 - self.base.x - self.len, x1 - self.base.x, ylo - self.base.y, yhi - self.base.y, |n, _| {
            out.push(Obj::Seg(n));
        });
    }
}

/// Interval of leaves parametrized by the origin offset `o` on `I`.
#[derive(Debug, Clone, Copy)]
struct Piece {
    copy0: u8,
    oa: f64,
    ob: f64,
    // x = sig·o + tau
    sig: f64,
    tau: f64,
    // current front y = fa·x + fb
    fa: f64,
    fb: f64,
    // vertical length flown, ha·o + hb
    ha: f64,
    hb: f64,
    up: bool,
    on: Obj,
    steps: usize,
}

impl Piece {
    fn x(&self, o: f64) -> f64 {
        self.sig * o + self.tau
    }
    fn o(&self, x: f64) -> f64 {
        self.sig * (x - self.tau)
    }
    fn sub(&self, x0: f64, x1: f64) -> Piece {
        let (a, b) = (self.o(x0), self.o(x1));
        Piece { oa: a.min(b), ob: a.max(b), ..*self }
    }
}

/// Splits `[x0, x1]` by the first object met above (below) the front.
fn resolve(geo: &Geo, pc: &Piece, x0: f64, x1: f64, window: f64, buf: &mut Vec<Obj>) -> Vec<(f64, f64, Option<Obj>)> {
    let f0 = pc.fa * x0 + pc.fb;
    let f1 = pc.fa * x1 + pc.fb;
    let (fmin, fmax) = (f0.min(f1), f0.max(f1));
    let (ylo, yhi) = if pc.up { (fmin, fmax + window) } else { (fmin - window, fmax) };
    geo.candidates(x0, x1, ylo, yhi, buf);
    let tol = 1e-13 * geo.scale;
    let mut cuts = vec![x0, x1];
    for &o in buf.iter() {
        if o == pc.on {
            continue;
        }
        let (a, b) = geo.x_range(o);
        for x in [a, b] {
            if x > x0 + tol && x < x1 - tol {
                cuts.push(x);
            }
        }
    }
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup_by(|a, b| (*a - *b).abs() <= tol);
    if let Some(last) = cuts.last_mut() {
        *last = x1;
    }
    let dtol = 1e-12 * geo.scale;
    let mut out: Vec<(f64, f64, Option<Obj>)> = Vec::new();
    for w in cuts.windows(2) {
        let xm = 0.5 * (w[0] + w[1]);
        let front = pc.fa * xm + pc.fb;
        let mut best: Option<(f64, Obj)> = None;
        for &o in buf.iter() {
            if o == pc.on {
                continue;
            }
            let (a, b) = geo.x_range(o);
            if xm < a || xm > b {
                continue;
            }
            let (g, h) = geo.line(o);
            let y = g * xm + h;
            let d = if pc.up { y - front } else { front - y };
            if d > dtol && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, o));
            }
        }
        let found = best.filter(|&(d, _)| if pc.up { front + d <= yhi } else { front - d >= ylo }).map(|(_, o)| o);
        match out.last_mut() {
            Some(last) if last.2 == found && found.is_some() => last.1 = w[1],
            _ => out.push((w[0], w[1], found)),
        }
    }
    out
}

const MAX_STEPS: usize = 100_000;

/// First-return map of the vertical flow to the transversal, computed by
/// flowing the two copies of `I` as intervals of leaves.
pub fn first_return_iet(torus: &SlitTorus, seg: &TransversalSegment) -> Result<IETWithFlips, RenormError> {
    let lat = torus.params.lattice().map_err(SurfaceError::from)?;
    let geo = Geo { scale: lat.scale(), lat, s: &torus.slit, base: seg.base, len: seg.length };
    let big = 1e4 * geo.scale.max(geo.lat.vertical_step());
    let start = |copy0: u8, up: bool| Piece {
        copy0,
        oa: 0.0,
        ob: seg.length,
        sig: 1.0,
        tau: seg.base.x,
        fa: 0.0,
        fb: seg.base.y,
        ha: 0.0,
        hb: 0.0,
        up,
        on: Obj::Seg([0, 0]),
        steps: 0,
    };
    let mut work = vec![start(1, false), start(0, true)];
    let mut branches = Vec::new();
    let mut buf = Vec::new();
    let spec = &torus.slit;
    while let Some(pc) = work.pop() {
        if pc.steps > MAX_STEPS || branches.len() + work.len() > 10_000 {
            return Err(RenormError::NonReturningOrbit(MAX_STEPS));
        }
        let (xa, xb) = {
            let (a, b) = (pc.x(pc.oa), pc.x(pc.ob));
            (a.min(b), a.max(b))
        };
        let mut todo = vec![(xa, xb, 4.0 * geo.lat.vertical_step() + spec.width())];
        let mut hits = Vec::new();
        while let Some((x0, x1, window)) = todo.pop() {
            if window > big {
                return Err(RenormError::NonReturningOrbit(MAX_STEPS));
            }
            for (y0, y1, o) in resolve(&geo, &pc, x0, x1, window, &mut buf) {
                match o {
                    Some(o) => hits.push((y0, y1, o)),
                    None => todo.push((y0, y1, window * 2.0)),
                }
            }
        }
        for (x0, x1, o) in hits {
            let sub = pc.sub(x0, x1);
            let (g, h) = geo.line(o);
            // flight length, affine in x, then in o
            let (mut da, mut db) = (g - pc.fa, h - pc.fb);
            if !pc.up {
                da = -da;
                db = -db;
            }
            let ha = pc.ha + da * pc.sig;
            let hb = pc.hb + da * pc.tau + db;
            match o {
                Obj::Seg(n) => {
                    let p = geo.lat.point(n);
                    let off = pc.tau - p.x - seg.base.x;
                    let (ia, ib) = (pc.sig * sub.oa + off, pc.sig * sub.ob + off);
                    let om = 0.5 * (sub.oa + sub.ob);
                    branches.push(Branch {
                        copy: pc.copy0,
                        lo: sub.oa,
                        hi: sub.ob,
                        img_copy: if pc.up { 0 } else { 1 },
                        img_lo: ia.min(ib),
                        img_hi: ia.max(ib),
                        flip: pc.sig < 0.0,
                        return_homology: HomologyVec::from_array(n),
                        return_vertical_length: ha * om + hb,
                    });
                }
                Obj::Slit(n) => {
                    let p = geo.lat.point(n);
                    let side = if pc.up { SlitSide::Below } else { SlitSide::Above };
                    let split = p.x + spec.split(side);
                    let tol = 1e-13 * geo.scale;
                    let mut parts = vec![(x0, x1)];
                    if split > x0 + tol && split < x1 - tol {
                        parts = vec![(x0, split), (split, x1)];
                    }
                    for (y0, y1) in parts {
                        let (_, kind) = spec.part(0.5 * (y0 + y1) - p.x, side);
                        let mut q = pc.sub(y0, y1);
                        match kind {
                            crate::slitsurface::PartKind::Translation => {
                                q.tau += if pc.up { spec.shift } else { -spec.shift };
                            }
                            crate::slitsurface::PartKind::Rotation => {
                                let c = p.x + spec.rotation_center(side);
                                q.sig = -q.sig;
                                q.tau = 2.0 * c - q.tau;
                                q.up = !q.up;
                            }
                        }
                        q.fa = g;
                        q.fb = h;
                        q.ha = ha;
                        q.hb = hb;
                        q.on = o;
                        q.steps += 1;
                        work.push(q);
                    }
                }
            }
        }
    }
    let mut iet = IETWithFlips { total_length: seg.length, copies: 2, branches };
    tidy(&mut iet, 1e-11);
    Ok(iet)
}

/// Sorts, closes rounding gaps between neighbours and merges branches that
/// continue each other.
fn tidy(iet: &mut IETWithFlips, rel_tol: f64) {
    let tol = rel_tol * iet.total_length;
    iet.branches.retain(|b| b.hi - b.lo > tol);
    iet.branches.sort_by(|a, b| (a.copy, a.lo).partial_cmp(&(b.copy, b.lo)).unwrap());
    let mut out: Vec<Branch> = Vec::with_capacity(iet.branches.len());
    for b in iet.branches.drain(..) {
        if let Some(p) = out.last_mut() {
            let cont = if b.flip { (p.img_lo - b.img_hi).abs() <= tol } else { (b.img_lo - p.img_hi).abs() <= tol };
            if p.copy == b.copy
                && p.img_copy == b.img_copy
                && p.flip == b.flip
                && p.return_homology == b.return_homology
                && (p.return_vertical_length - b.return_vertical_length).abs() <= 1e-9 * p.return_vertical_length
                && (b.lo - p.hi).abs() <= tol
                && cont
            {
                p.hi = b.hi;
                if b.flip {
                    p.img_lo = b.img_lo;
                } else {
                    p.img_hi = b.img_hi;
                }
                continue;
            }
        }
        out.push(b);
    }
    iet.branches = out;
    canonicalize(iet);
}

/// Rebuilds positions from lengths so that domains and images tile each copy
/// exactly. Lengths get the least-norm correction that balances every copy.
fn canonicalize(iet: &mut IETWithFlips) {
    let n = iet.branches.len();
    let r = iet.total_length;
    let nc = iet.copies as usize;
    // constraints: domain sum per copy, image sum per copy except the last
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for c in 0..nc {
        rows.push(iet.branches.iter().map(|b| (b.copy as usize == c) as u8 as f64).collect());
    }
    for c in 0..nc.saturating_sub(1) {
        rows.push(iet.branches.iter().map(|b| (b.img_copy as usize == c) as u8 as f64).collect());
    }
    let len: Vec<f64> = iet.branches.iter().map(|b| b.len()).collect();
    let m = rows.len();
    let mut gram = vec![vec![0.0; m + 1]; m];
    for i in 0..m {
        for j in 0..m {
            gram[i][j] = (0..n).map(|k| rows[i][k] * rows[j][k]).sum();
        }
        gram[i][m] = (0..n).map(|k| rows[i][k] * len[k]).sum::<f64>() - r;
    }
    let mu = solve(gram);
    let len: Vec<f64> = (0..n).map(|k| len[k] - (0..m).map(|i| rows[i][k] * mu[i]).sum::<f64>()).collect();
    for c in 0..iet.copies {
        let mut at = 0.0;
        for (k, b) in iet.branches.iter_mut().enumerate() {
            if b.copy == c {
                b.lo = at;
                at += len[k];
                b.hi = at;
            }
        }
        if let Some(b) = iet.branches.iter_mut().rev().find(|b| b.copy == c) {
            b.hi = r;
        }
        let mut order: Vec<usize> = (0..n).filter(|&k| iet.branches[k].img_copy == c).collect();
        order.sort_by(|&a, &b| iet.branches[a].img_lo.total_cmp(&iet.branches[b].img_lo));
        let mut at = 0.0;
        for &k in &order {
            let b = &mut iet.branches[k];
            b.img_lo = at;
            at += len[k];
            b.img_hi = at;
        }
        if let Some(&k) = order.last() {
            iet.branches[k].img_hi = r;
        }
    }
}

/// Gaussian elimination on an augmented matrix; singular pivots give 0.
fn solve(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let m = a.len();
    for col in 0..m {
        let piv = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        if a[col][col].abs() < 1e-12 {
            continue;
        }
        for row in 0..m {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..=m {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    (0..m).map(|i| if a[i][i].abs() < 1e-12 { 0.0 } else { a[i][m] / a[i][i] }).collect()
}

/// Limits for the induction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InductionLimits {
    pub max_word: usize,
    pub max_branches: usize,
}

impl Default for InductionLimits {
    fn default() -> Self {
        InductionLimits { max_word: 100_000, max_branches: 64 }
    }
}

/// First-return map to `[0, ratio·L)` on every copy. Returns the induced map,
/// the transition `B` with `A' = B·A` between level bases, and `dt = −log ratio`.
pub fn induce(iet: &IETWithFlips, ratio: f64) -> Result<(IETWithFlips, IMat2, f64), RenormError> {
    induce_with(iet, ratio, InductionLimits::default())
}

/// The induced map alone, without level bases. The map is snapped to the
/// integer grid and induced exactly.
pub fn induce_map(iet: &IETWithFlips, ratio: f64, lim: InductionLimits) -> Result<IETWithFlips, RenormError> {
    let g = ExactIet::from_float(iet);
    Ok(g.induce(g.cut(ratio)?, lim)?.to_float())
}

pub fn induce_with(iet: &IETWithFlips, ratio: f64, lim: InductionLimits) -> Result<(IETWithFlips, IMat2, f64), RenormError> {
    if ratio == 1.0 {
        return Ok((iet.clone(), IDENTITY, 0.0));
    }
    let g = ExactIet::from_float(iet);
    let l0 = g.length();
    let a0 = level_basis_from(&g, None, l0).ok_or_else(no_basis)?;
    let (next, _, b, dt) = induce_from(&g, &a0, l0, ratio, lim)?;
    Ok((next.to_float(), b, dt))
}

fn no_basis() -> RenormError {
    RenormError::InductionBlowup("no unimodular level basis".into())
}

/// One induction step from a level with basis `a0`. Returns the induced map,
/// its basis, `B` with `A' = B·A` and the time increment. `l0` is the
/// initial length, which fixes the rescaling used to price generators.
pub fn induce_from(
    iet: &ExactIet,
    a0: &LevelBasis,
    l0: f64,
    ratio: f64,
    lim: InductionLimits,
) -> Result<(ExactIet, LevelBasis, IMat2, f64), RenormError> {
    let r = iet.cut(ratio)?;
    let next = iet.induce(r, lim)?;
    let mut a1 = level_basis_from(&next, Some(a0), l0).ok_or_else(no_basis)?;
    let overflow = || RenormError::InductionBlowup("homology coordinates overflow".into());
    let mut b = imat_mul_checked(&a1.rows, &imat_inv(&a0.rows)).ok_or_else(overflow)?;
    // keep generators in the slots of the old ones they are closest to
    if b[0][0].abs() + b[1][1].abs() < b[0][1].abs() + b[1][0].abs() {
        b.swap(0, 1);
        a1.heights.swap(0, 1);
        a1.closing.swap(0, 1);
    }
    // orient each new generator to agree with the old ones on balance
    for row in b.iter_mut() {
        if row[0] + row[1] < 0 || (row[0] + row[1] == 0 && row[0] < 0) {
            row[0] = -row[0];
            row[1] = -row[1];
        }
    }
    a1.rows = imat_mul_checked(&b, &a0.rows).ok_or_else(overflow)?;
    let dt = (iet.total as f64 / r as f64).ln();
    Ok((next, a1, b, dt))
}

/// Return-time constant: every vertical path of length at least `K` meets
/// the segment and two consecutive meetings are at least `1/K` apart.
pub fn zippered_bounds(iet: &IETWithFlips) -> f64 {
    let (lo, hi) = iet.heights();
    hi.max(1.0 / lo).max(1.0)
}

/// Ratio of one Rauzy step for a one-copy map without flips: the shorter of
/// the last domain and last image interval is cut off.
pub fn rauzy_ratio(iet: &IETWithFlips) -> f64 {
    let last_dom = iet.branches.last().map_or(0.0, |b| b.len());
    let last_img = iet
        .branches
        .iter()
        .max_by(|a, b| a.img_hi.total_cmp(&b.img_hi))
        .map(|b| b.len())
        .unwrap_or(0.0);
    1.0 - last_dom.min(last_img) / iet.total_length
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::geom::imat_mul;
    use crate::renorm::build_transversal;
    use crate::slitsurface::{build_torus, trace_surface};
    use crate::windtree::SystemParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn generic() -> SlitTorus {
        let p = SystemParams::new(Vec2::new(1.03, 0.17), Vec2::new(-0.31, 0.98), 0.31, 0.22, 0.61);
        build_torus(&p, 0.01).unwrap()
    }

    #[test]
    fn rotation_level_zero() {
        let iet = IETWithFlips::rotation(0.3);
        assert!(iet.check_partition(1e-14));
        assert!(!iet.has_flips());
        let (c, s, _) = iet.apply(0, 0.5).unwrap();
        assert_eq!(c, 0);
        assert!((s - 0.2).abs() < 1e-15);
        assert_eq!(zippered_bounds(&iet), 1.0);
    }

    #[test]
    fn identity_induction() {
        let iet = IETWithFlips::rotation(0.3);
        let (j, b, dt) = induce(&iet, 1.0).unwrap();
        assert_eq!(j, iet);
        assert_eq!(b, IDENTITY);
        assert_eq!(dt, 0.0);
    }

    /// Rauzy steps of the rotation by `alpha`, with the level basis carried
    /// from step to step.
    fn rauzy_steps(alpha: f64) -> impl Iterator<Item = (ExactIet, IMat2, f64)> {
        let mut iet = ExactIet::from_float(&IETWithFlips::rotation(alpha));
        let l0 = iet.length();
        let mut basis = level_basis_from(&iet, None, l0).unwrap();
        std::iter::from_fn(move || {
            let ratio = rauzy_ratio(&iet.to_float());
            let (next, a1, b, dt) = induce_from(&iet, &basis, l0, ratio, InductionLimits::default()).unwrap();
            basis = a1;
            iet = next.clone();
            Some((next, b, dt))
        })
    }

    #[test]
    fn golden_rotation_gives_elementary_steps() {
        let alpha = (5f64.sqrt() - 1.0) / 2.0;
        let lower: IMat2 = [[1, 0], [1, 1]];
        let upper: IMat2 = [[1, 1], [0, 1]];
        let mut prod = IDENTITY;
        let mut steps = rauzy_steps(alpha);
        for k in 0..20 {
            let (next, b, dt) = steps.next().unwrap();
            // the rounding of alpha grows by about φ² per step
            assert!((dt + alpha.ln()).abs() < 1e-6, "step {k}: dt {dt}");
            assert!(b == lower || b == upper, "step {k}: {b:?}");
            assert_eq!(next.branches.len(), 2);
            prod = imat_mul(&b, &prod);
        }
        // the product of 20 golden steps carries Fibonacci entries
        let mut fib = vec![1i64, 1];
        for i in 2..25 {
            fib.push(fib[i - 1] + fib[i - 2]);
        }
        assert!(prod.iter().flatten().all(|v| fib.contains(&v.abs()) || *v == 0));
        assert!(prod.iter().flatten().any(|v| v.abs() == fib[20] || v.abs() == fib[19]));
    }

    #[test]
    fn rotation_steps_follow_partial_quotients() {
        // α = [0; 2, 3, 1, 4, 2, 1, 3]
        let cf = [2u32, 3, 1, 4, 2, 1, 3];
        let mut alpha = 0.0;
        for &a in cf.iter().rev() {
            alpha = 1.0 / (a as f64 + alpha);
        }
        // Rauzy steps for s ↦ s − α: runs of equal elementary steps of
        // lengths a1 - 1, a2, a3, ...
        let types: Vec<bool> = rauzy_steps(alpha).take(12).map(|(_, b, _)| b[0][1] == 1).collect();
        let mut runs = Vec::new();
        for t in &types {
            match runs.last_mut() {
                Some((v, n)) if v == t => *n += 1,
                _ => runs.push((*t, 1u32)),
            }
        }
        let lens: Vec<u32> = runs.iter().map(|r| r.1).collect();
        assert_eq!(&lens[..4], &[cf[0] - 1, cf[1], cf[2], cf[3]], "{types:?}");
    }

    #[test]
    fn induced_homology_matches_iterated_returns() {
        let t = generic();
        let seg = build_transversal(&t).unwrap();
        let iet = first_return_iet(&t, &seg).unwrap();
        let (ind, _, _) = induce(&iet, 0.6).unwrap();
        let r = ind.total_length;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let c = rng.random_range(0..2u8);
            let s = rng.random_range(0.0..r);
            let b = ind.branch_at(c, s).unwrap();
            if (s - b.lo).min(b.hi - s) < 1e-9 * r {
                continue;
            }
            let (c2, s2, h, _) = iet.return_to(c, s, r, 10_000).unwrap();
            assert_eq!(h, b.return_homology);
            assert_eq!(c2, b.img_copy);
            assert!((s2 - b.apply(s)).abs() < 1e-9 * r);
        }
    }

    #[test]
    fn level_zero_is_a_partition_with_flips() {
        let t = generic();
        let seg = build_transversal(&t).unwrap();
        let iet = first_return_iet(&t, &seg).unwrap();
        assert!(iet.check_partition(1e-10), "{iet:#?}");
        assert!(iet.has_flips());
        assert!(iet.branches.iter().all(|b| b.flip == (b.copy != b.img_copy)));
        assert!(level_basis(&iet).is_some());
    }

    #[test]
    fn level_zero_agrees_with_traced_leaves() {
        let t = generic();
        let seg = build_transversal(&t).unwrap();
        let iet = first_return_iet(&t, &seg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let s = rng.random_range(0.0..seg.length);
            let up = rng.random_bool(0.5);
            let c = if up { 0 } else { 1 };
            let b = *iet.branch_at(c, s).unwrap();
            if (s - b.lo).min(b.hi - s) < 1e-9 {
                continue;
            }
            let start = seg.base + Vec2::new(s, 0.0);
            let mut tr = crate::slitsurface::SurfaceTracer::new(&t, start, up).unwrap().with_transversal(seg.base, seg.length);
            let mut first = None;
            let mut flips = 0;
            while first.is_none() {
                let v = tr.visit_with(|_, _| {}, |h| {
                    if first.is_none() {
                        first = Some(h);
                    }
                }).unwrap();
                if first.is_none() && v.kind == Some(crate::slitsurface::PartKind::Rotation) {
                    flips += 1;
                }
            }
            let h = first.unwrap();
            assert_eq!(HomologyVec::from_array(h.lambda), b.return_homology);
            assert_eq!(h.up, b.img_copy == 0);
            assert!((h.offset - b.apply(s)).abs() < 1e-9);
            assert!((h.arclength - b.return_vertical_length).abs() < 1e-9);
            assert_eq!(flips % 2 == 1, b.flip);
        }
        // every long vertical path meets I
        let k = zippered_bounds(&iet);
        let rec = trace_surface(&t, Vec2::new(0.0123, 0.0456), true, 10).unwrap();
        assert!(rec.final_arclength() > 0.0 && k >= 1.0);
    }
}
