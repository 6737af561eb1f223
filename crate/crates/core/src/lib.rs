//! Boundary value problems for Hamiltonian systems, solved through the
//! generating functions of the phase-flow canonical transformation.
//!
//! The crate computes generating functions either as quadratic forms (for
//! linear or linearized dynamics) or as truncated polynomials in relative
//! coordinates (for nonlinear motion about a reference), and applies them
//! to Lambert-style transfers, periodic-orbit searches, linear-quadratic
//! optimal control, invariant-manifold propagation and formation
//! reconfiguration cost maps.

pub mod applications;
pub mod dynamics;
pub mod expr;
pub mod hj;
pub mod lineargf;
pub mod ode;
pub mod partition;
pub mod poly;
pub mod tpbvp;

pub use dynamics::{DynamicsError, HamiltonianModel, PhaseState, ReferenceTrajectory};
pub use expr::Expr;
pub use hj::{GeneratingFunction, GfArtifact, HjError};
pub use lineargf::{QuadraticGf, QuadraticHamiltonian, StateTransition};
pub use partition::{BoundaryPartition, GfKind};
pub use poly::{Inversion, PolynomialSystem, TruncatedPolynomial};
