//! The plane model: a lattice of tilted rectangles and the negative-refraction
//! ray tracer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{
    rectangle_corners, reflect_direction, DirAngle, GeomError, Lattice, Tolerance, Vec2,
};
use crate::slitsurface::HomologyVec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub e1: Vec2,
    pub e2: Vec2,
    pub a: f64,
    pub b: f64,
    pub theta: f64,
}

impl SystemParams {
    pub fn new(e1: Vec2, e2: Vec2, a: f64, b: f64, theta: f64) -> Self {
        SystemParams { e1, e2, a, b, theta }
    }

    pub fn lattice(&self) -> Result<Lattice, GeomError> {
        Lattice::new(self.e1, self.e2)
    }

    pub fn tolerance(&self) -> Tolerance {
        Tolerance::for_rectangle(self.a, self.b)
    }

    /// Checks sides, angle and lattice without testing admissibility.
    pub fn validate(&self) -> Result<(), GeomError> {
        rectangle_corners(self.a, self.b, self.theta, Vec2::ZERO)?;
        self.lattice()?;
        Ok(())
    }

    pub fn diameter(&self) -> f64 {
        self.a.hypot(self.b)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("parameters are not admissible: rectangles overlap or touch")]
    NotAdmissible,
    #[error("start point {0:?} lies inside an obstacle")]
    StartInsideObstacle(Vec2),
    #[error("start point {0:?} lies on an obstacle boundary")]
    StartOnBoundary(Vec2),
    #[error("entry and exit on the same side {0} (grazing crossing)")]
    SameSide(u8),
    #[error("no obstacle met within vertical distance {0:e} of x = {1}")]
    Escaped(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrossingKind {
    Translation,
    Reversal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Enter,
    Exit,
    CornerStop,
    SlitCross,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Enter => "enter",
            EventKind::Exit => "exit",
            EventKind::CornerStop => "corner",
            EventKind::SlitCross => "slit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub kind: EventKind,
    pub obstacle_index: [i64; 2],
    pub point: Vec2,
    pub dir_after: DirAngle,
    pub arclength: f64,
    /// Side id for Enter/Exit, corner id for CornerStop, slit part id for SlitCross.
    pub feature: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    MaxEvents,
    CornerStop,
    SingularHit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub params: SystemParams,
    pub start: Vec2,
    pub initial_dir: DirAngle,
    pub events: Vec<TraceEvent>,
    pub checkpoints: Vec<(f64, Vec2)>,
    pub crossings: HomologyVec,
    /// Homology of the trajectory closed at each fundamental-domain crossing.
    pub homology_log: Vec<(f64, HomologyVec)>,
    pub stop: StopReason,
}

impl TrajectoryRecord {
    pub fn final_arclength(&self) -> f64 {
        self.events.last().map_or(0.0, |e| e.arclength)
    }

    /// Piecewise-linear path: start followed by event points.
    pub fn vertices(&self) -> Vec<Vec2> {
        let mut v = Vec::with_capacity(self.events.len() + 1);
        v.push(self.start);
        v.extend(self.events.iter().map(|e| e.point));
        v
    }
}

/// Side `i` runs from corner `i` to corner `i+1`; its line makes the angle
/// `θ + iπ/2` with the horizontal.
pub fn side_angle(theta: f64, side: u8) -> f64 {
    theta + side as f64 * std::f64::consts::FRAC_PI_2
}

pub fn classify_crossing(entry_side: u8, exit_side: u8) -> Result<CrossingKind, TraceError> {
    assert!(entry_side < 4 && exit_side < 4, "side ids are 0..3");
    match (entry_side + 4 - exit_side) % 4 {
        0 => Err(TraceError::SameSide(entry_side)),
        2 => Ok(CrossingKind::Translation),
        _ => Ok(CrossingKind::Reversal),
    }
}

/// True iff the rectangles are pairwise disjoint (with a margin of
/// `eps_geom · (a + b)`).
pub fn admissible(params: &SystemParams) -> Result<bool, TraceError> {
    params.validate()?;
    let lat = params.lattice()?;
    let (s, c) = params.theta.sin_cos();
    let u = Vec2::new(c, s);
    let n = Vec2::new(-s, c);
    let margin = params.tolerance().eps_geom * (params.a + params.b);
    let r = 2.0 * params.diameter();
    let mut ok = true;
    lat.for_each_in_box(-r, r, -r, r, |idx, p| {
        if idx == [0, 0] || p.norm() > r {
            return;
        }
        let sep_u = p.dot(u).abs() - params.a;
        let sep_n = p.dot(n).abs() - params.b;
        if sep_u.max(sep_n) <= margin {
            ok = false;
        }
    });
    Ok(ok)
}

/// Rectangle geometry relative to its center, shared with the slit model.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Obstacle {
    pub a: f64,
    pub b: f64,
    pub theta: f64,
    pub sin: f64,
    pub cos: f64,
    pub tan: f64,
    pub cot: f64,
    pub u: Vec2,
    pub n: Vec2,
    /// Corners c, R, T, L (counterclockwise from the lowest).
    pub corners: [Vec2; 4],
}

impl Obstacle {
    pub fn new(params: &SystemParams) -> Result<Self, GeomError> {
        let corners = rectangle_corners(params.a, params.b, params.theta, Vec2::ZERO)?;
        let (sin, cos) = params.theta.sin_cos();
        Ok(Obstacle {
            a: params.a,
            b: params.b,
            theta: params.theta,
            sin,
            cos,
            tan: sin / cos,
            cot: cos / sin,
            u: Vec2::new(cos, sin),
            n: Vec2::new(-sin, cos),
            corners,
        })
    }

    pub fn low(&self) -> Vec2 {
        self.corners[0]
    }
    pub fn right(&self) -> Vec2 {
        self.corners[1]
    }
    pub fn top(&self) -> Vec2 {
        self.corners[2]
    }
    pub fn left(&self) -> Vec2 {
        self.corners[3]
    }

    /// Height of the lower (up = true) or upper boundary above local abscissa
    /// `x`, with the side it lies on.
    pub fn boundary(&self, x: f64, up: bool) -> (f64, u8) {
        let (c, t) = (self.low(), self.top());
        if up {
            if x >= c.x {
                (c.y + (x - c.x) * self.tan, 0)
            } else {
                (c.y + (c.x - x) * self.cot, 3)
            }
        } else if x >= t.x {
            (t.y - (x - t.x) * self.cot, 1)
        } else {
            (t.y - (t.x - x) * self.tan, 2)
        }
    }

    pub fn to_local(&self, p: Vec2) -> (f64, f64) {
        let q = p - self.low();
        (q.dot(self.u), q.dot(self.n))
    }

    pub fn from_local(&self, s: f64, r: f64) -> Vec2 {
        self.low() + self.u * s + self.n * r
    }

    pub fn contains(&self, p: Vec2, margin: f64) -> bool {
        let (s, r) = self.to_local(p);
        s > -margin && s < self.a + margin && r > -margin && r < self.b + margin
    }

    /// Straight interior run from the entry point (local coordinates) on
    /// `entry_side`, for a vertical ray going `up`. Returns the exit point in
    /// local coordinates, the exit side and the interior path length.
    pub fn interior(&self, s0: f64, r0: f64, entry_side: u8, up: bool) -> (f64, f64, u8, f64) {
        let sgn = if up { 1.0 } else { -1.0 };
        let (mut ds, mut dr) = (sgn * self.sin, sgn * self.cos);
        if entry_side % 2 == 0 {
            ds = -ds;
        } else {
            dr = -dr;
        }
        let mut best = (f64::INFINITY, entry_side);
        let mut consider = |t: f64, side: u8| {
            if side != entry_side && t < best.0 && t >= 0.0 {
                best = (t, side);
            }
        };
        if ds > 0.0 {
            consider((self.a - s0) / ds, 1);
        } else if ds < 0.0 {
            consider(-s0 / ds, 3);
        }
        if dr > 0.0 {
            consider((self.b - r0) / dr, 2);
        } else if dr < 0.0 {
            consider(-r0 / dr, 0);
        }
        let (t, side) = best;
        let (mut s1, mut r1) = (s0 + t * ds, r0 + t * dr);
        match side {
            0 => r1 = 0.0,
            1 => s1 = self.a,
            2 => r1 = self.b,
            _ => s1 = 0.0,
        }
        (s1, r1, side, t)
    }
}

/// Result of one obstacle visit.
#[derive(Debug, Clone, Copy)]
pub enum Visit {
    Crossed {
        enter: TraceEvent,
        exit: TraceEvent,
        kind: CrossingKind,
    },
    Corner(TraceEvent),
}

/// Streaming plane tracer: each call to [`PlaneTracer::visit`] advances to
/// the next obstacle and through it.
#[derive(Debug, Clone)]
pub struct PlaneTracer {
    pub params: SystemParams,
    pub tol: Tolerance,
    lat: Lattice,
    obs: Obstacle,
    pos: Vec2,
    up: bool,
    arclength: f64,
    stopped: bool,
    max_dist: f64,
}

impl PlaneTracer {
    pub fn new(params: SystemParams, start: Vec2, up: bool) -> Result<Self, TraceError> {
        Self::with_tolerance(params, start, up, params.tolerance())
    }

    pub fn with_tolerance(
        params: SystemParams,
        start: Vec2,
        up: bool,
        tol: Tolerance,
    ) -> Result<Self, TraceError> {
        if !admissible(&params)? {
            return Err(TraceError::NotAdmissible);
        }
        let lat = params.lattice()?;
        let obs = Obstacle::new(&params)?;
        let d = params.diameter();
        let mut inside = None;
        lat.for_each_in_box(start.x - d, start.x + d, start.y - d, start.y + d, |_, p| {
            let q = start - p;
            if obs.contains(q, tol.eps_geom * d) {
                inside = Some(obs.contains(q, -tol.eps_geom * d));
            }
        });
        match inside {
            Some(true) => return Err(TraceError::StartInsideObstacle(start)),
            Some(false) => return Err(TraceError::StartOnBoundary(start)),
            None => {}
        }
        let max_dist = 1e6 * lat.scale().max(d);
        Ok(PlaneTracer {
            params,
            tol,
            lat,
            obs,
            pos: start,
            up,
            arclength: 0.0,
            stopped: false,
            max_dist,
        })
    }

    pub fn position(&self) -> Vec2 {
        self.pos
    }
    pub fn is_up(&self) -> bool {
        self.up
    }
    pub fn arclength(&self) -> f64 {
        self.arclength
    }
    pub fn stopped(&self) -> bool {
        self.stopped
    }
    pub fn lattice(&self) -> &Lattice {
        &self.lat
    }

    /// Next obstacle on the current vertical ray: lattice index, center and
    /// entry height.
    fn next_obstacle(&self) -> Result<([i64; 2], Vec2, f64, u8), TraceError> {
        let o = &self.obs;
        let eps = self.tol.eps_corner;
        let (x, y0, up) = (self.pos.x, self.pos.y, self.up);
        let rx = (o.left().x - eps, o.right().x + eps);
        let ry = (o.low().y, o.top().y);
        let found = self.lat.scan_vertical(x, y0, up, rx, ry, 0.0, self.max_dist, |idx, p| {
            let (h, side) = o.boundary(x - p.x, up);
            Some((p.y + h, (idx, p, side)))
        });
        match found {
            Some((d, (idx, center, side))) => {
                let y = if up { y0 + d } else { y0 - d };
                Ok((idx, center, y, side))
            }
            None => Err(TraceError::Escaped(self.max_dist, x)),
        }
    }

    /// Flow to the next obstacle and through it.
    pub fn visit(&mut self) -> Result<Visit, TraceError> {
        assert!(!self.stopped, "tracer already stopped at a corner");
        let o = self.obs;
        let eps = self.tol.eps_corner;
        let (idx, center, y_entry, entry_side) = self.next_obstacle()?;
        let x = self.pos.x;
        let lx = x - center.x;
        let entry = Vec2::new(x, y_entry);
        self.arclength += (y_entry - self.pos.y).abs();
        self.pos = entry;
        let dir_in = DirAngle::vertical(self.up);

        // grazing an endpoint, or hitting the lowest/highest corner head-on
        let near = |v: f64| (lx - v).abs() < eps;
        let head: u8 = if self.up { 0 } else { 2 };
        let corner = if near(o.left().x) {
            Some(3)
        } else if near(o.right().x) {
            Some(1)
        } else if near(o.corners[head as usize].x) {
            Some(head)
        } else {
            None
        };
        if let Some(cid) = corner {
            self.stopped = true;
            return Ok(Visit::Corner(TraceEvent {
                kind: EventKind::CornerStop,
                obstacle_index: idx,
                point: entry,
                dir_after: dir_in,
                arclength: self.arclength,
                feature: cid,
            }));
        }

        let inside_dir = reflect_direction(dir_in, side_angle(o.theta, entry_side)).reversed();
        let enter = TraceEvent {
            kind: EventKind::Enter,
            obstacle_index: idx,
            point: entry,
            dir_after: inside_dir,
            arclength: self.arclength,
            feature: entry_side,
        };
        let (s0, r0) = o.to_local(entry - center);
        let (s0, r0) = match entry_side {
            0 => (s0, 0.0),
            1 => (o.a, r0),
            2 => (s0, o.b),
            _ => (0.0, r0),
        };
        let (s1, r1, exit_side, len) = o.interior(s0, r0, entry_side, self.up);
        let exit_pt = center + o.from_local(s1, r1);
        self.arclength += len;
        self.pos = exit_pt;
        if let Some(cid) = (0..4u8).find(|&i| (exit_pt - center - o.corners[i as usize]).norm() < eps) {
            self.stopped = true;
            return Ok(Visit::Corner(TraceEvent {
                kind: EventKind::CornerStop,
                obstacle_index: idx,
                point: exit_pt,
                dir_after: inside_dir,
                arclength: self.arclength,
                feature: cid,
            }));
        }
        let kind = classify_crossing(entry_side, exit_side)?;
        if kind == CrossingKind::Reversal {
            self.up = !self.up;
        }
        let exit = TraceEvent {
            kind: EventKind::Exit,
            obstacle_index: idx,
            point: exit_pt,
            dir_after: DirAngle::vertical(self.up),
            arclength: self.arclength,
            feature: exit_side,
        };
        Ok(Visit::Crossed { enter, exit, kind })
    }
}

/// Appends checkpoints every `stride` of arclength along the segment `p → q`
/// covering arclength `[s0, s1]`.
pub(crate) fn push_checkpoints(
    out: &mut Vec<(f64, Vec2)>,
    next: &mut f64,
    stride: f64,
    p: Vec2,
    q: Vec2,
    s0: f64,
    s1: f64,
) {
    if !(stride > 0.0) || !stride.is_finite() {
        return;
    }
    while *next <= s1 {
        let f = if s1 > s0 { (*next - s0) / (s1 - s0) } else { 0.0 };
        out.push((*next, p + (q - p) * f));
        *next += stride;
    }
}

/// Traces the vertical trajectory from `start` for at most `max_events`
/// events (each Enter, Exit or CornerStop counts once).
pub fn trace_plane(
    params: &SystemParams,
    start: Vec2,
    up: bool,
    max_events: usize,
    checkpoint_stride: f64,
) -> Result<TrajectoryRecord, TraceError> {
    let mut tr = PlaneTracer::new(*params, start, up)?;
    let mut events = Vec::with_capacity(max_events.min(1 << 22));
    let mut checkpoints = Vec::new();
    let mut next_cp = 0.0;
    let mut prev = (start, 0.0);
    let mut stop = StopReason::MaxEvents;
    while events.len() < max_events {
        let v = tr.visit()?;
        let evs: &[TraceEvent] = match &v {
            Visit::Crossed { enter, exit, .. } => &[*enter, *exit],
            Visit::Corner(e) => std::slice::from_ref(e),
        };
        for e in evs.iter().take(max_events - events.len()) {
            push_checkpoints(&mut checkpoints, &mut next_cp, checkpoint_stride, prev.0, e.point, prev.1, e.arclength);
            prev = (e.point, e.arclength);
            events.push(*e);
        }
        if let Visit::Corner(_) = v {
            stop = StopReason::CornerStop;
            break;
        }
    }
    Ok(TrajectoryRecord {
        params: *params,
        start,
        initial_dir: DirAngle::vertical(up),
        events,
        checkpoints,
        crossings: HomologyVec::default(),
        homology_log: Vec::new(),
        stop,
    })
}
