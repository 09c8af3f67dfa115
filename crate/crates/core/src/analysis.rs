//! Post-processing of traced trajectories: strip fits, growth exponents,
//! vertical lengths, the decomposition of long loops along the induction
//! levels, and the intersection monitor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{imat_inv, Vec2};
use crate::renorm::{InductionRun, TransversalSegment};
use crate::slitsurface::{HomologyVec, IHit, SlitTorus, SurfaceError, SurfaceTracer};
use crate::windtree::{EventKind, StopReason, TrajectoryRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("torus is not in the open set (margin {0})")]
    NotInOEpsilon(f64),
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("arclengths span {0:.2} decades, need 3")]
    InsufficientSpan(f64),
    #[error("level mismatch: {0}")]
    LevelMismatch(String),
}

/// Sum of `|Δy|` along a polyline.
pub fn vertical_length(path: &[Vec2]) -> f64 {
    path.windows(2).map(|w| (w[1].y - w[0].y).abs()).sum()
}

/// Constant `c` with `l_v(γ) ≥ c·(|n1|·v1 + |n2|·v2)` for closed loops of the
/// torus, from the vertical extents of the domain sides and of the slit.
pub fn lower_bound_constant(torus: &SlitTorus) -> Result<f64, AnalysisError> {
    if !torus.in_o_eps() {
        return Err(AnalysisError::NotInOEpsilon(torus.o_eps.margin));
    }
    Ok(c_from_heights(torus.v1.abs(), torus.v2.abs(), torus.v3.abs(), torus.v4.abs()))
}

fn c_from_heights(v1: f64, v2: f64, v3: f64, v4: f64) -> f64 {
    let c = (v1.min(v2) - v3.max(v4)) / v1.max(v2);
    c.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripFit {
    /// Direction of the strip, in `[0, π)`.
    pub theta: f64,
    /// `max − min` of the perpendicular deviation.
    pub width: f64,
    /// Perpendicular offset of the strip center from the origin.
    pub center_offset: f64,
    /// Perpendicular deviation from the centroid line at each checkpoint.
    pub residual_profile: Vec<(f64, f64)>,
}

fn angle_mod_pi(a: f64) -> f64 {
    let t = a.rem_euclid(std::f64::consts::PI);
    if t >= std::f64::consts::PI {
        0.0
    } else {
        t
    }
}

/// Principal axis of the centered point cloud and the perpendicular extent.
pub fn fit_strip(checkpoints: &[(f64, Vec2)]) -> Result<StripFit, AnalysisError> {
    if checkpoints.len() < 10 {
        return Err(AnalysisError::TooFewPoints { needed: 10, got: checkpoints.len() });
    }
    let n = checkpoints.len() as f64;
    let c = checkpoints.iter().fold(Vec2::ZERO, |a, (_, p)| a + *p) * (1.0 / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (_, p) in checkpoints {
        let d = *p - c;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    let theta = angle_mod_pi(0.5 * (2.0 * sxy).atan2(sxx - syy));
    let z = Vec2::new(-theta.sin(), theta.cos());
    let residual_profile: Vec<(f64, f64)> = checkpoints.iter().map(|(s, p)| (*s, (*p - c).dot(z))).collect();
    let (lo, hi) = extent(residual_profile.iter().map(|r| r.1));
    Ok(StripFit { theta, width: hi - lo, center_offset: c.dot(z) + 0.5 * (lo + hi), residual_profile })
}

fn extent(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Perpendicular and along-strip extents of a cloud for strip direction
/// `theta`.
pub fn extents_along(points: &[Vec2], theta: f64) -> (f64, f64) {
    let u = Vec2::new(theta.cos(), theta.sin());
    let z = Vec2::new(-u.y, u.x);
    let (plo, phi) = extent(points.iter().map(|p| p.dot(z)));
    let (alo, ahi) = extent(points.iter().map(|p| p.dot(u)));
    ((phi - plo).max(0.0), (ahi - alo).max(0.0))
}

/// Least-squares slope of `log max_{s≤t} |p_s − p_0|` against `log t`, over
/// 20 geometric samples per decade, after discarding the first decade.
pub fn diffusion_exponent(checkpoints: &[(f64, Vec2)]) -> Result<(f64, f64), AnalysisError> {
    let Some(&(_, p0)) = checkpoints.first() else {
        return Err(AnalysisError::InsufficientSpan(0.0));
    };
    let t_min = checkpoints.iter().map(|c| c.0).find(|&t| t > 0.0).unwrap_or(0.0);
    let t_max = checkpoints.last().map_or(0.0, |c| c.0);
    let span = if t_min > 0.0 && t_max > t_min { (t_max / t_min).log10() } else { 0.0 };
    if span < 3.0 {
        return Err(AnalysisError::InsufficientSpan(span));
    }
    let per_decade = 20.0;
    let start = t_min * 10.0;
    let steps = ((t_max / start).log10() * per_decade).floor() as usize;
    let mut xs = Vec::with_capacity(steps + 1);
    let mut ys = Vec::with_capacity(steps + 1);
    let mut run_max = 0.0f64;
    let mut i = 0;
    for j in 0..=steps {
        let t = start * 10f64.powf(j as f64 / per_decade);
        while i < checkpoints.len() && checkpoints[i].0 <= t * (1.0 + 1e-12) {
            run_max = run_max.max((checkpoints[i].1 - p0).norm());
            i += 1;
        }
        if run_max > 0.0 {
            xs.push(t.ln());
            ys.push(run_max.ln());
        }
    }
    if xs.len() < 3 {
        // bounded at zero: no growth at all
        return Ok((0.0, 0.0));
    }
    Ok(ols_slope(&xs, &ys))
}

/// Slope and its standard error.
fn ols_slope(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum();
    let se = if n > 2.0 { (rss / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    (slope, se)
}

/// Running supremum of `|w1·n2 − w2·n1|` along the homology log.
pub fn bounded_intersection_monitor(record: &TrajectoryRecord, w: [f64; 2]) -> Vec<(f64, f64)> {
    let mut sup = 0.0f64;
    record
        .homology_log
        .iter()
        .map(|(s, h)| {
            sup = sup.max((w[0] * h.n2 as f64 - w[1] * h.n1 as f64).abs());
            (*s, sup)
        })
        .collect()
}

/// Surface trace that also reports every crossing of the transversal.
#[derive(Debug, Clone)]
pub struct InstrumentedTrace {
    pub record: TrajectoryRecord,
    pub hits: Vec<IHit>,
    /// Cell of the start point, in `(u1, u2)` units.
    pub start_cell: [i64; 2],
}

pub fn trace_instrumented(
    torus: &SlitTorus,
    seg: &TransversalSegment,
    start: Vec2,
    up: bool,
    max_events: usize,
) -> Result<InstrumentedTrace, SurfaceError> {
    let mut tr = SurfaceTracer::new(torus, start, up)?.with_transversal(seg.base, seg.length);
    let mut events = Vec::new();
    let mut log = Vec::new();
    let mut hits = Vec::new();
    let mut stop = StopReason::MaxEvents;
    while events.len() < max_events {
        let v = tr.visit_with(|s, h| log.push((s, h)), |h| hits.push(h))?;
        events.push(v.event);
        if v.event.kind == EventKind::CornerStop {
            stop = StopReason::SingularHit;
            break;
        }
    }
    let record = TrajectoryRecord {
        params: torus.params,
        start,
        initial_dir: crate::geom::DirAngle::vertical(up),
        events,
        checkpoints: Vec::new(),
        crossings: tr.homology(),
        homology_log: log,
        stop,
    };
    Ok(InstrumentedTrace { record, hits, start_cell: torus.cell(start) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditLevel {
    pub k: usize,
    pub t: f64,
    /// Coefficients in the level-k generators of the two pieces between the
    /// first hits of levels k and k+1 and between the last hits.
    pub m_first: [i64; 2],
    pub m_last: [i64; 2],
    pub bound: f64,
    pub within_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionAudit {
    pub levels: Vec<AuditLevel>,
    /// Deepest level met at least twice with a nontrivial piece between the
    /// first and last hit.
    pub n: usize,
    /// Coefficients of the piece between the first and last hit of level n.
    pub m_middle: [i64; 2],
    pub gamma_t: HomologyVec,
    pub reconstructed: HomologyVec,
    pub identity_holds: bool,
    pub bound_holds: bool,
    pub middle_nonzero: bool,
    pub k_const: f64,
    pub c: f64,
    pub pass: bool,
}

/// Splits the trajectory at the first and last hits of each `I^(k)` and
/// writes every piece in the level generators.
///
/// The pieces between hits are loops closed along `I`, whose classes are
/// differences of hit lattice indices. The two ends are read off the cell
/// log. At a hit the cell log equals the lattice index plus the cell of the
/// hit point on `I`, so the sum of all pieces plus that correction must equal
/// the class of the whole trajectory.
pub fn decomposition_audit(
    trace: &InstrumentedTrace,
    torus: &SlitTorus,
    run: &InductionRun,
) -> Result<DecompositionAudit, AnalysisError> {
    if trace.record.params != torus.params {
        return Err(AnalysisError::LevelMismatch("trace and induction use different parameters".into()));
    }
    let c = lower_bound_constant(torus)?;
    let seg = &run.transversal;
    let hits = &trace.hits;
    let gamma_t = trace.record.crossings;
    // cell of the hit point on I, relative to the start cell
    let rho = |h: &IHit| -> HomologyVec {
        let q = torus.cell(seg.base + Vec2::new(h.offset, 0.0));
        torus.to_e([q[0] - trace.start_cell[0], q[1] - trace.start_cell[1]])
    };
    let lam = |h: &IHit| HomologyVec::from_array(h.lambda);
    let at = |s: f64| {
        let k = trace.record.homology_log.partition_point(|(t, _)| *t <= s);
        if k == 0 {
            HomologyVec::ZERO
        } else {
            trace.record.homology_log[k - 1].1
        }
    };
    // first and last hit of each level
    let mut firsts: Vec<usize> = Vec::new();
    let mut lasts: Vec<usize> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for lvl in &run.levels {
        let inside: Vec<usize> = (0..hits.len()).filter(|&i| hits[i].offset < lvl.length).collect();
        if inside.is_empty() {
            break;
        }
        firsts.push(inside[0]);
        lasts.push(*inside.last().unwrap());
        counts.push(inside.len());
    }
    let coeffs = |k: usize, h: HomologyVec| -> Result<[i64; 2], AnalysisError> {
        let a = run.levels[k].basis;
        let inv = imat_inv(&a);
        let v = h.to_array();
        let m = [v[0] * inv[0][0] + v[1] * inv[1][0], v[0] * inv[0][1] + v[1] * inv[1][1]];
        let back = [m[0] * a[0][0] + m[1] * a[1][0], m[0] * a[0][1] + m[1] * a[1][1]];
        if back != v {
            return Err(AnalysisError::LevelMismatch(format!("level {k} basis is not unimodular")));
        }
        Ok(m)
    };
    let recombine = |k: usize, m: [i64; 2]| {
        let a = run.levels[k].basis;
        HomologyVec::new(m[0] * a[0][0] + m[1] * a[1][0], m[0] * a[0][1] + m[1] * a[1][1])
    };
    if firsts.is_empty() {
        // never meets I: the whole trajectory is the prefix
        return Ok(DecompositionAudit {
            levels: Vec::new(),
            n: 0,
            m_middle: [0, 0],
            gamma_t,
            reconstructed: gamma_t,
            identity_holds: true,
            bound_holds: true,
            middle_nonzero: false,
            k_const: run.k_const,
            c,
            pass: true,
        });
    }
    // returns around the slit can be null-homologous on the torus, so the
    // deepest level met twice may close up trivially; the middle level is the
    // deepest one with a nontrivial piece
    let middle = |k: usize| lam(&hits[lasts[k]]) - lam(&hits[firsts[k]]);
    let twice = counts.iter().rposition(|&c| c >= 2).unwrap_or(0);
    let n = (0..=twice).rev().find(|&k| counts[k] >= 2 && middle(k) != HomologyVec::ZERO).unwrap_or(twice);
    let mut levels = Vec::new();
    let mut sum = HomologyVec::ZERO;
    for k in 0..n {
        let (f0, f1) = (&hits[firsts[k]], &hits[firsts[k + 1]]);
        let (l0, l1) = (&hits[lasts[k]], &hits[lasts[k + 1]]);
        let m_first = coeffs(k, lam(f1) - lam(f0))?;
        let m_last = coeffs(k, lam(l0) - lam(l1))?;
        sum = sum + recombine(k, m_first) + recombine(k, m_last);
        let dt = run.levels[k + 1].t - run.levels[k].t;
        let bound = 2.0 * run.k_const * run.k_const / c * (-dt).exp();
        let used = (m_first[0].abs() + m_first[1].abs()).max(m_last[0].abs() + m_last[1].abs()) as f64;
        levels.push(AuditLevel { k, t: run.levels[k].t, m_first, m_last, bound, within_bound: used <= bound });
    }
    let m_middle = coeffs(n, middle(n))?;
    sum = sum + recombine(n, m_middle);
    let first = &hits[firsts[0]];
    let last = &hits[lasts[0]];
    let prefix = at(first.arclength);
    let suffix = gamma_t - at(last.arclength);
    let reconstructed = prefix + sum + suffix + rho(last) - rho(first);
    let identity_holds = reconstructed == gamma_t;
    let bound_holds = levels.iter().all(|l| l.within_bound);
    let middle_nonzero = m_middle != [0, 0];
    let pass = identity_holds && bound_holds && (counts[n] < 2 || middle_nonzero);
    Ok(DecompositionAudit {
        levels,
        n,
        m_middle,
        gamma_t,
        reconstructed,
        identity_holds,
        bound_holds,
        middle_nonzero,
        k_const: run.k_const,
        c,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn vertical_length_ignores_horizontal_moves() {
        let path = [Vec2::new(0.0, 0.0), Vec2::new(3.0, 1.0), Vec2::new(-2.0, -0.5), Vec2::new(7.0, -0.5)];
        assert!((vertical_length(&path) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn c_is_clamped_into_the_unit_interval() {
        assert!((c_from_heights(2.0, 1.0, 0.5, 0.25) - 0.25).abs() < 1e-15);
        assert!(c_from_heights(1.0, 1.0, 2.0, 0.0) > 0.0);
        assert!(c_from_heights(1.0, 1.0, 0.0, 0.0) < 1.0);
    }

    #[test]
    fn short_inputs_are_rejected() {
        let pts: Vec<(f64, Vec2)> = (0..9).map(|i| (i as f64, Vec2::new(i as f64, 0.0))).collect();
        assert_eq!(fit_strip(&pts).unwrap_err(), AnalysisError::TooFewPoints { needed: 10, got: 9 });
        assert!(matches!(diffusion_exponent(&pts), Err(AnalysisError::InsufficientSpan(_))));
    }

    #[test]
    fn bounded_cloud_has_zero_slope() {
        let pts: Vec<(f64, Vec2)> = (0..=5000).map(|i| (i as f64, Vec2::new((i % 7) as f64, 0.0))).collect();
        let (slope, _) = diffusion_exponent(&pts).unwrap();
        assert!(slope.abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn strip_fit_recovers_direction_and_width(theta in 0.0f64..std::f64::consts::PI, w in 0.1f64..5.0) {
            let u = Vec2::new(theta.cos(), theta.sin());
            let z = Vec2::new(-u.y, u.x);
            let pts: Vec<(f64, Vec2)> = (0..400)
                .map(|i| {
                    let s = (i / 2) as f64;
                    let side = if i % 2 == 0 { 0.5 } else { -0.5 };
                    (s, Vec2::new(3.0, -1.0) + u * (10.0 * s) + z * (side * w))
                })
                .collect();
            let fit = fit_strip(&pts).unwrap();
            let gap = (fit.theta - theta).rem_euclid(std::f64::consts::PI);
            prop_assert!(gap.min(std::f64::consts::PI - gap) < 1e-6);
            prop_assert!((fit.width - w).abs() < 1e-6 * (1.0 + w));
            let cloud: Vec<Vec2> = pts.iter().map(|p| p.1).collect();
            let (perp, along) = extents_along(&cloud, theta);
            prop_assert!((perp - w).abs() < 1e-9 * 4000.0);
            prop_assert!((along - 1990.0).abs() < 1e-6);
        }

        #[test]
        fn power_laws_give_their_exponent(nu in 0.1f64..1.5) {
            let mut pts = vec![(0.0, Vec2::ZERO)];
            pts.extend((0..=5000).map(|i| 10f64.powf(i as f64 / 1000.0)).map(|t| (t, Vec2::new(0.0, t.powf(nu)))));
            let (slope, se) = diffusion_exponent(&pts).unwrap();
            prop_assert!((slope - nu).abs() < 1e-9);
            prop_assert!(se < 1e-9);
        }
    }
}
