//! Wind-tree tiling billiards.
//!
//! Rays travel vertically between rectangular obstacles placed on a lattice and
//! cross each obstacle with refraction index −1. The crate traces them in the
//! plane, rebuilds the equivalent slit half-translation surface and its
//! quotient torus, renormalizes the vertical flow on that torus, and measures
//! the trapping strip and growth exponents.

pub mod analysis;
pub mod geom;
pub mod renorm;
pub mod sample;
pub mod slitsurface;
pub mod windtree;

pub use analysis::{
    bounded_intersection_monitor, decomposition_audit, diffusion_exponent, extents_along, fit_strip,
    lower_bound_constant, trace_instrumented, vertical_length, AnalysisError, AuditLevel,
    DecompositionAudit, InstrumentedTrace, StripFit,
};
pub use geom::{
    lattice_reduce, rectangle_corners, reflect_direction, DirAngle, GeomError, IMat2, Lattice,
    Tolerance, Vec2,
};
pub use renorm::{
    build_transversal, direction_drift, first_return_iet, induce, lyapunov_estimate, predict_strip,
    run_induction, zippered_bounds, CocycleAccumulator, ExactIet, IETWithFlips, InductionOptions,
    InductionRun, LevelBasis, LevelRecord, LyapunovEstimate, RenormError, TransversalSegment,
};
pub use sample::{random_admissible, random_o_eps, random_start, SampleRanges};
pub use slitsurface::{
    build_slit, build_torus, compare_traces, gamma_t, intersection_form, reconstruct_displacement,
    slit_transition, trace_surface, EquivalenceReport, HomologyVec, SlitCase, SlitSide, SlitSpec,
    SlitTorus, SurfaceError, SurfaceTracer,
};
pub use windtree::{
    admissible, classify_crossing, trace_plane, CrossingKind, EventKind, PlaneTracer,
    SystemParams, TraceError, TraceEvent, TrajectoryRecord,
};

/// Version string embedded in every emitted artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
