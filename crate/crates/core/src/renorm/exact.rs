//! Return maps on an integer grid. Translations and flips `x ↦ c − x` are
//! exact on integers, so the induction keeps every discontinuity exactly
//! where the initial map puts it however deep it goes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::iet::{Branch, IETWithFlips, InductionLimits};
use super::RenormError;
use crate::slitsurface::HomologyVec;

/// Grid units per initial length: `2^GRID_BITS`.
pub const GRID_BITS: u32 = 100;

/// Dither range, about one double-precision ulp of the initial length.
const DITHER: i128 = 1 << (GRID_BITS - 52);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridBranch {
    pub copy: u8,
    pub lo: i128,
    pub hi: i128,
    pub img_copy: u8,
    pub img_lo: i128,
    pub img_hi: i128,
    pub flip: bool,
    pub return_homology: HomologyVec,
    pub return_vertical_length: f64,
}

impl GridBranch {
    /// Image as `s' = sig·s + off`.
    fn affine(&self) -> (i128, i128) {
        if self.flip {
            (-1, self.img_hi + self.lo)
        } else {
            (1, self.img_lo - self.lo)
        }
    }

    fn apply(&self, s: i128) -> i128 {
        let (sig, off) = self.affine();
        sig * s + off
    }
}

/// A first-return map with grid positions; `unit` is the length of one grid
/// step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactIet {
    pub total: i128,
    pub copies: u8,
    pub unit: f64,
    /// Sorted by `(copy, lo)`.
    pub branches: Vec<GridBranch>,
}

impl ExactIet {
    /// Snaps a map to the grid; the bits below double precision are filled
    /// with a fixed pseudo-random dither. Lengths known to 53 bits are
    /// rational with a small denominator, and the induction of such a map
    /// turns periodic once `e^{(1+θ)t}` reaches `2^53`.
    ///
    /// A two-copy return map of a vertical flow has the form `T = σ∘τ`,
    /// where `σ` swaps the copies and `τ` is an isometric involution pairing
    /// the intervals (flowing down retraces flowing up). Leaving that form is
    /// an unstable direction of the induction, so the pairing is snapped as
    /// such, with one length per pair. Maps without the pairing are snapped
    /// branch by branch.
    pub fn from_float(iet: &IETWithFlips) -> ExactIet {
        let mut bs = iet.branches.clone();
        bs.sort_by(|a, b| (a.copy, a.lo).partial_cmp(&(b.copy, b.lo)).unwrap());
        let out = if iet.copies == 2 { snap_paired(iet, &bs) } else { None };
        let out = out.unwrap_or_else(|| snap_branches(iet, &bs));
        let total: i128 = 1 << GRID_BITS;
        ExactIet { total, copies: iet.copies, unit: iet.total_length / total as f64, branches: out }
    }

    pub fn to_float(&self) -> IETWithFlips {
        let u = self.unit;
        IETWithFlips {
            total_length: self.total as f64 * u,
            copies: self.copies,
            branches: self
                .branches
                .iter()
                .map(|b| Branch {
                    copy: b.copy,
                    lo: b.lo as f64 * u,
                    hi: b.hi as f64 * u,
                    img_copy: b.img_copy,
                    img_lo: b.img_lo as f64 * u,
                    img_hi: b.img_hi as f64 * u,
                    flip: b.flip,
                    return_homology: b.return_homology,
                    return_vertical_length: b.return_vertical_length,
                })
                .collect(),
        }
    }

    pub fn length(&self) -> f64 {
        self.total as f64 * self.unit
    }

    pub fn branch_at(&self, copy: u8, s: i128) -> Option<&GridBranch> {
        let i = self.branches.partition_point(|b| b.copy < copy || (b.copy == copy && b.lo <= s));
        let b = self.branches.get(i.checked_sub(1)?)?;
        (b.copy == copy && s >= b.lo && s < b.hi).then_some(b)
    }

    pub fn apply(&self, copy: u8, s: i128) -> Option<(u8, i128, &GridBranch)> {
        let b = self.branch_at(copy, s)?;
        Some((b.img_copy, b.apply(s), b))
    }

    /// Exact tiling of `[0, total)` by domains and by images on every copy.
    pub fn is_partition(&self) -> bool {
        (0..self.copies).all(|c| {
            let mut d: Vec<(i128, i128)> = self.branches.iter().filter(|b| b.copy == c).map(|b| (b.lo, b.hi)).collect();
            let mut i: Vec<(i128, i128)> =
                self.branches.iter().filter(|b| b.img_copy == c).map(|b| (b.img_lo, b.img_hi)).collect();
            let ok = [&mut d, &mut i].into_iter().all(|v| {
                v.sort();
                let mut at = 0;
                for &(lo, hi) in v.iter() {
                    if lo != at || hi <= lo {
                        return false;
                    }
                    at = hi;
                }
                at == self.total
            });
            ok
        }) && self.branches.iter().all(|b| b.img_hi - b.img_lo == b.hi - b.lo)
    }

    pub fn heights(&self) -> (f64, f64) {
        self.branches.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), b| {
            (lo.min(b.return_vertical_length), hi.max(b.return_vertical_length))
        })
    }

    /// First-return map to `[0, r)` on every copy.
    pub fn induce(&self, r: i128, lim: InductionLimits) -> Result<ExactIet, RenormError> {
        if !(r > 0 && r <= self.total) {
            return Err(RenormError::BadRatio(r as f64 / self.total as f64));
        }
        #[derive(Clone, Copy)]
        struct W {
            copy0: u8,
            oa: i128,
            ob: i128,
            sig: i128,
            tau: i128,
            cur: u8,
            hom: HomologyVec,
            height: f64,
            word: usize,
        }
        let mut work: Vec<W> = self
            .branches
            .iter()
            .filter(|b| b.lo < r)
            .map(|b| {
                let (sig, tau) = b.affine();
                W {
                    copy0: b.copy,
                    oa: b.lo,
                    ob: b.hi.min(r),
                    sig,
                    tau,
                    cur: b.img_copy,
                    hom: b.return_homology,
                    height: b.return_vertical_length,
                    word: 1,
                }
            })
            .collect();
        let mut out = Vec::new();
        while let Some(w) = work.pop() {
            if w.word > lim.max_word {
                return Err(RenormError::InductionBlowup(format!("return word longer than {}", lim.max_word)));
            }
            // image of [oa, ob) is [lo, hi); with a flip the half-open ends swap
            let (a, b) = (w.sig * w.oa + w.tau, w.sig * w.ob + w.tau);
            let (lo, hi) = (a.min(b), a.max(b));
            let back = |s: i128| w.sig * (s - w.tau);
            let emit = |out: &mut Vec<GridBranch>, oa: i128, ob: i128| {
                let (ia, ib) = (w.sig * oa + w.tau, w.sig * ob + w.tau);
                out.push(GridBranch {
                    copy: w.copy0,
                    lo: oa.min(ob),
                    hi: oa.max(ob),
                    img_copy: w.cur,
                    img_lo: ia.min(ib),
                    img_hi: ia.max(ib),
                    flip: w.sig < 0,
                    return_homology: w.hom,
                    return_vertical_length: w.height,
                });
            };
            if hi <= r {
                emit(&mut out, w.oa, w.ob);
                continue;
            }
            let (lo, mut w2) = if lo < r {
                let (p, q) = (back(lo), back(r));
                emit(&mut out, p.min(q), p.max(q));
                let (p, q) = (back(r), back(hi));
                (r, W { oa: p.min(q), ob: p.max(q), ..w })
            } else {
                (lo, w)
            };
            w2.word += 1;
            for nb in self.branches.iter().filter(|nb| nb.copy == w.cur && nb.hi > lo && nb.lo < hi) {
                let (s0, s1) = (nb.lo.max(lo), nb.hi.min(hi));
                let (p, q) = (back(s0), back(s1));
                let (bs, bt) = nb.affine();
                work.push(W {
                    oa: p.min(q),
                    ob: p.max(q),
                    sig: bs * w.sig,
                    tau: bs * w.tau + bt,
                    cur: nb.img_copy,
                    hom: w.hom + nb.return_homology,
                    height: w.height + nb.return_vertical_length,
                    ..w2
                });
            }
        }
        out.sort_by_key(|b| (b.copy, b.lo));
        let mut merged: Vec<GridBranch> = Vec::with_capacity(out.len());
        for b in out {
            if let Some(p) = merged.last_mut() {
                let cont = if b.flip { p.img_lo == b.img_hi } else { b.img_lo == p.img_hi };
                if p.copy == b.copy
                    && p.img_copy == b.img_copy
                    && p.flip == b.flip
                    && p.return_homology == b.return_homology
                    && (p.return_vertical_length - b.return_vertical_length).abs() <= 1e-9 * p.return_vertical_length
                    && b.lo == p.hi
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
            merged.push(b);
        }
        if merged.len() > lim.max_branches {
            return Err(RenormError::InductionBlowup(format!("{} branches", merged.len())));
        }
        Ok(ExactIet { total: r, copies: self.copies, unit: self.unit, branches: merged })
    }

    /// Cut point for a relative ratio.
    pub fn cut(&self, ratio: f64) -> Result<i128, RenormError> {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(RenormError::BadRatio(ratio));
        }
        let r = ((self.total as f64 * ratio).round() as i128).clamp(1, self.total);
        // a ratio meant to hit an endpoint only does so up to rounding
        let near = self
            .branches
            .iter()
            .flat_map(|b| [b.lo, b.hi, b.img_lo, b.img_hi])
            .filter(|&e| e > 0)
            .min_by_key(|&e| (e - r).abs())
            .filter(|&e| (e - r).abs() <= self.total >> 50);
        Ok(near.unwrap_or(r))
    }
}

fn dither(rng: &mut ChaCha8Rng) -> i128 {
    rng.random_range(0..DITHER)
}

/// Branch-by-branch snapping: lengths are rounded from the domain side and
/// a rounding imbalance between image copies is moved between two branches
/// of one domain copy.
fn snap_branches(iet: &IETWithFlips, bs: &[Branch]) -> Vec<GridBranch> {
    let total: i128 = 1 << GRID_BITS;
    let scale = total as f64 / iet.total_length;
    let n = bs.len();
    let mut len = vec![0i128; n];
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
    for c in 0..iet.copies {
        let idx: Vec<usize> = (0..n).filter(|&k| bs[k].copy == c).collect();
        let mut at = 0i128;
        for (m, &k) in idx.iter().enumerate() {
            let hi = if m + 1 == idx.len() { total } else { (bs[k].hi * scale).round() as i128 };
            len[k] = hi - at;
            at = hi;
        }
        let mut shift = 0;
        for &k in &idx[..idx.len().saturating_sub(1)] {
            let d = dither(&mut rng);
            len[k] += d;
            shift += d;
        }
        if let Some(&k) = idx.last() {
            len[k] -= shift;
        }
    }
    if iet.copies == 2 {
        let e: i128 = (0..n).filter(|&k| bs[k].img_copy == 0).map(|k| len[k]).sum::<i128>() - total;
        if e != 0 {
            let pick = (0..2u8).find_map(|c| {
                let x = (0..n).filter(|&k| bs[k].copy == c && bs[k].img_copy == 0).max_by_key(|&k| len[k])?;
                let y = (0..n).filter(|&k| bs[k].copy == c && bs[k].img_copy == 1).max_by_key(|&k| len[k])?;
                Some((x, y))
            });
            if let Some((x, y)) = pick {
                len[x] -= e;
                len[y] += e;
            }
        }
    }
    let mut out: Vec<GridBranch> = bs.iter().map(|b| grid_branch(b, 0, 0, 0, 0)).collect();
    for c in 0..iet.copies {
        let mut at = 0;
        for k in (0..n).filter(|&k| bs[k].copy == c) {
            out[k].lo = at;
            at += len[k];
            out[k].hi = at;
        }
        let mut order: Vec<usize> = (0..n).filter(|&k| bs[k].img_copy == c).collect();
        order.sort_by(|&a, &b| bs[a].img_lo.total_cmp(&bs[b].img_lo));
        let mut at = 0;
        for k in order {
            out[k].img_lo = at;
            at += len[k];
            out[k].img_hi = at;
        }
    }
    out.retain(|b| b.hi > b.lo);
    out
}

fn grid_branch(b: &Branch, lo: i128, hi: i128, img_lo: i128, img_hi: i128) -> GridBranch {
    GridBranch {
        copy: b.copy,
        lo,
        hi,
        img_copy: b.img_copy,
        img_lo,
        img_hi,
        flip: b.flip,
        return_homology: b.return_homology,
        return_vertical_length: b.return_vertical_length,
    }
}

/// Snapping through the pairing `τ`: branch `k` on `(c, J)` landing on
/// `(c', J')` pairs `J` with the interval `J'` of copy `1 − c'`. Returns
/// `None` if the branches do not pair up.
fn snap_paired(iet: &IETWithFlips, bs: &[Branch]) -> Option<Vec<GridBranch>> {
    let total: i128 = 1 << GRID_BITS;
    let scale = total as f64 / iet.total_length;
    let tol = 1e-9 * iet.total_length;
    let n = bs.len();
    let mut partner = vec![usize::MAX; n];
    for k in 0..n {
        let c = 1 - bs[k].img_copy;
        let j = (0..n).find(|&j| {
            bs[j].copy == c && (bs[j].lo - bs[k].img_lo).abs() <= tol && (bs[j].hi - bs[k].img_hi).abs() <= tol
        })?;
        partner[k] = j;
    }
    if (0..n).any(|k| partner[partner[k]] != k || bs[partner[k]].return_homology != -bs[k].return_homology) {
        return None;
    }
    // one length per pair, keyed by its smaller index
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
    let mut len = vec![0i128; n];
    for k in 0..n {
        if k <= partner[k] {
            len[k] = (bs[k].len() * scale).round() as i128 + dither(&mut rng);
        }
    }
    let key = |k: usize| k.min(partner[k]);
    // balance the copies; pair p appears `count[p][c]` times on copy c
    let sum = |c: u8, len: &[i128]| (0..n).filter(|&k| bs[k].copy == c).map(|k| len[key(k)]).sum::<i128>();
    let (e0, e1) = (total - sum(0, &len), total - sum(1, &len));
    let mut count = vec![[0i128; 2]; n];
    for k in 0..n {
        count[key(k)][bs[k].copy as usize] += 1;
    }
    let reps: Vec<usize> = (0..n).filter(|&k| k == key(k)).collect();
    let best = |shape: [bool; 2]| {
        reps.iter().copied().filter(|&p| [count[p][0] > 0, count[p][1] > 0] == shape).max_by_key(|&p| (-count[p][0] - count[p][1], len[p]))
    };
    let (only0, only1, cross) = (best([true, false]), best([false, true]), best([true, true]));
    let split = |d: i128, p: usize, c: usize| (d % count[p][c] == 0).then(|| d / count[p][c]);
    // candidate fixes as (pair, delta) lists
    let plans = [
        only1.zip(only0).and_then(|(p1, p0)| Some(vec![(p1, split(e1, p1, 1)?), (p0, split(e0, p0, 0)?)])),
        cross.zip(only0).and_then(|(x, p0)| Some(vec![(x, e1), (p0, split(e0 - e1, p0, 0)?)])),
        cross.zip(only1).and_then(|(x, p1)| Some(vec![(x, e0), (p1, split(e1 - e0, p1, 1)?)])),
        cross.filter(|_| e0 == e1).map(|x| vec![(x, e0)]),
    ];
    let plan = plans.into_iter().flatten().next()?;
    for (p, d) in plan {
        len[p] += d;
    }
    let mut pos = vec![(0i128, 0i128); n];
    for c in 0..2u8 {
        let mut at = 0;
        for k in (0..n).filter(|&k| bs[k].copy == c) {
            let l = len[key(k)];
            if l <= 0 {
                return None;
            }
            pos[k] = (at, at + l);
            at += l;
        }
        if at != total {
            return None;
        }
    }
    Some((0..n).map(|k| grid_branch(&bs[k], pos[k].0, pos[k].1, pos[partner[k]].0, pos[partner[k]].1)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::renorm::iet::tests::generic;
    use crate::renorm::{build_transversal, first_return_iet};
    use proptest::prelude::*;

    #[test]
    fn snapping_keeps_the_level_zero_map() {
        let t = generic();
        let seg = build_transversal(&t).unwrap();
        let iet = first_return_iet(&t, &seg).unwrap();
        let g = ExactIet::from_float(&iet);
        assert!(g.is_partition());
        let back = g.to_float();
        assert_eq!(back.branches.len(), iet.branches.len());
        for (a, b) in back.branches.iter().zip(&iet.branches) {
            assert!((a.lo - b.lo).abs() < 1e-14 && (a.img_lo - b.img_lo).abs() < 1e-14);
            assert_eq!(a.return_homology, b.return_homology);
        }
    }

    #[test]
    fn deep_induction_stays_exact() {
        let t = generic();
        let seg = build_transversal(&t).unwrap();
        let mut g = ExactIet::from_float(&first_return_iet(&t, &seg).unwrap());
        for _ in 0..160 {
            let r = g.cut((-0.25f64).exp()).unwrap();
            g = g.induce(r, InductionLimits::default()).unwrap();
            assert!(g.is_partition());
            assert!(g.branches.iter().all(|b| b.flip == (b.copy != b.img_copy)));
        }
        // t = 40: far beyond what double precision resolves
        assert!(g.length() < 1e-17 * seg.length);
    }

    proptest! {
        #[test]
        fn induced_returns_compose(ratio in 0.2f64..0.95, seed in 0u64..1000) {
            let g = ExactIet::from_float(&IETWithFlips::rotation(0.3819660112501051));
            let j = g.induce(g.cut(ratio).unwrap(), InductionLimits::default()).unwrap();
            prop_assert!(j.is_partition());
            // follow one point through the old map until it lands in [0, r)
            let s = (seed as i128 * 7919 * (j.total / 1000)) % j.total;
            let b = j.branch_at(0, s).unwrap();
            let (mut c, mut x, mut h) = (0u8, s, HomologyVec::ZERO);
            loop {
                let (c2, x2, ob) = g.apply(c, x).unwrap();
                h = h + ob.return_homology;
                c = c2;
                x = x2;
                if x < j.total {
                    break;
                }
            }
            prop_assert_eq!(x, b.apply(s));
            prop_assert_eq!(h, b.return_homology);
        }
    }
}
