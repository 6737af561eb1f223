//! Applications of phase-flow generating functions: periodic-orbit
//! search, linear-quadratic optimal control, hyperbolic-manifold
//! propagation and formation reconfiguration cost maps.

mod formation;
mod lq;
mod manifold;
mod periodic;

use thiserror::Error;

use crate::dynamics::DynamicsError;
use crate::hj::HjError;
use crate::lineargf::LinearGfError;
use crate::tpbvp::TpbvpError;

pub use formation::{formation_cost_map, FormationMap, FormationOptions};
pub use lq::{
    lq_solve, optimal_control_reduce, LqBoundary, LqProblem, LqSolution, MatrixFn,
};
pub use manifold::{
    characteristic_time, hyperbolic_modes, manifold_propagate, EigenMode, ManifoldTrajectory,
};
pub use periodic::{
    periodic_f2_solve, periodic_position_scan, periodic_time_scan, GridSpec, PeriodicOrbit,
    PositionScan, ScanOptions, TimeScan, TimeScanSample,
};

#[derive(Debug, Error)]
pub enum ApplicationError {
    #[error("grid reaches amplitude {0:.3e}, beyond the trust radius {1:.3e}")]
    OutsideTrustRadius(f64, f64),
    #[error("contour output needs a two-degree-of-freedom model (got n = {0})")]
    NeedPlanar(usize),
    #[error("running-cost block {0} violates its definiteness requirement")]
    BadCostBlock(&'static str),
    #[error("boundary mode fixes index {0} twice or out of range")]
    BadBoundaryIndex(usize),
    #[error("no real hyperbolic mode found (largest |Re lambda| = {0:.3e})")]
    NoHyperbolicMode(f64),
    #[error("Newton refinement failed at {0}")]
    RefinementFailed(String),
    #[error(transparent)]
    Hj(#[from] HjError),
    #[error(transparent)]
    Tpbvp(#[from] TpbvpError),
    #[error(transparent)]
    Linear(#[from] LinearGfError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}
