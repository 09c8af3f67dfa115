//! Renormalization of the vertical flow on the quotient torus: a transversal
//! from a 3π zero, the first-return map with flips, shrinking-interval
//! induction and the resulting cocycle on homology.

mod cocycle;
mod exact;
mod iet;
mod transversal;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cocycle::{direction_drift, lyapunov_estimate, predict_strip, CocycleAccumulator, LyapunovEstimate};
pub use exact::{ExactIet, GridBranch, GRID_BITS};
pub use iet::{
    first_return_iet, induce, loop_candidates, induce_from, induce_map, induce_with, level_basis, level_basis_from, rauzy_ratio, zippered_bounds, Branch, IETWithFlips,
    InductionLimits, LevelBasis,
};
pub use transversal::{build_transversal, build_transversal_capped, TransversalSegment};

use crate::geom::{IMat2, IDENTITY};
use crate::slitsurface::{SlitTorus, SurfaceError};

#[derive(Debug, Error)]
pub enum RenormError {
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error("degenerate slit: no transversal segment")]
    DegenerateSlit,
    #[error("vertical saddle connection suspected")]
    SaddleConnectionSuspected,
    #[error("orbit did not return within {0} steps")]
    NonReturningOrbit(usize),
    #[error("induction blow-up: {0}")]
    InductionBlowup(String),
    #[error("accumulated time {0} below the required {1}")]
    InsufficientTime(f64, f64),
    #[error("time {0} does not increase")]
    NonIncreasingTime(f64),
    #[error("zero direction")]
    ZeroDirection,
    #[error("induction ratio {0} outside (0, 1]")]
    BadRatio(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InductionOptions {
    pub ratio: f64,
    pub t_max: f64,
    pub limits: InductionLimits,
}

impl Default for InductionOptions {
    fn default() -> Self {
        InductionOptions { ratio: (-0.25f64).exp(), t_max: 30.0, limits: InductionLimits::default() }
    }
}

/// One level of the induction; serialized as a line of the renormalization log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub k: usize,
    pub t: f64,
    /// Length of `I^(k)`.
    pub length: f64,
    pub branches: usize,
    /// Rows are the level-k generators in `(e1, e2)` coordinates.
    pub basis: IMat2,
    /// `A_k = B_k · A_{k-1}`.
    pub b: IMat2,
    /// Larger length of the two generators on the rescaled surface.
    pub basis_cost: f64,
    /// Return-time constant of the rescaled level.
    pub k_level: f64,
    pub theta_running: f64,
    pub contracted_dir: Option<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct InductionRun {
    pub transversal: TransversalSegment,
    pub iet0: IETWithFlips,
    pub levels: Vec<LevelRecord>,
    pub acc: CocycleAccumulator,
    /// Largest per-level return constant.
    pub k_const: f64,
    pub last: ExactIet,
}

impl InductionRun {
    pub fn t(&self) -> f64 {
        self.acc.t()
    }
}

fn rescaled_k((lo, hi): (f64, f64), t: f64) -> f64 {
    let s = (-t).exp();
    (hi * s).max(1.0 / (lo * s)).max(1.0)
}

/// Builds the transversal and its return map, then induces on
/// `I^(k) = [0, e^{-t_k}·|I|)` with a fixed ratio until `t_max`.
pub fn run_induction(torus: &SlitTorus, opts: InductionOptions) -> Result<InductionRun, RenormError> {
    let seg = build_transversal(torus)?;
    let iet0 = first_return_iet(torus, &seg)?;
    if !iet0.check_partition(1e-10) {
        return Err(RenormError::InductionBlowup("level-0 return map is not a partition".into()));
    }
    let grid = ExactIet::from_float(&iet0);
    let l0 = grid.length();
    let a0 = level_basis_from(&grid, None, l0)
        .ok_or_else(|| RenormError::InductionBlowup("no unimodular level basis".into()))?;
    let mut acc = CocycleAccumulator::new(a0.rows);
    let k0 = rescaled_k(grid.heights(), 0.0);
    let mut levels = vec![LevelRecord {
        k: 0,
        t: 0.0,
        length: l0,
        branches: grid.branches.len(),
        basis: a0.rows,
        b: IDENTITY,
        basis_cost: a0.cost,
        k_level: k0,
        theta_running: 0.0,
        contracted_dir: None,
    }];
    let mut k_const = k0;
    let mut iet = grid;
    let mut t = 0.0;
    let mut basis = a0;
    while t < opts.t_max - 1e-9 {
        let (next, a1, b, dt) = iet::induce_from(&iet, &basis, l0, opts.ratio, opts.limits)?;
        t += dt;
        acc.push(b, t)?;
        basis = a1;
        let kl = rescaled_k(next.heights(), t);
        k_const = k_const.max(kl);
        let k = levels.len();
        levels.push(LevelRecord {
            k,
            t,
            length: next.length(),
            branches: next.branches.len(),
            basis: basis.rows,
            b,
            basis_cost: basis.cost,
            k_level: kl,
            theta_running: acc.product_norm_log[k] / t,
            contracted_dir: acc.contracted[k],
        });
        iet = next;
    }
    Ok(InductionRun { transversal: seg, iet0, levels, acc, k_const, last: iet })
}
