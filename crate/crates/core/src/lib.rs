//! Exact event-driven simulation of sticky traffic blocks on a road whose
//! lane count is piecewise constant.
//!
//! The state is a finite ordered list of constant-state blocks carrying
//! density `n ∈ {0, n*(x)}`, velocity `u` and velocity offset `p`. Blocks
//! move affinely between events; events (collisions, a head reaching a lane
//! transition, an intermediate coupling running out) are located in closed
//! form and resolved by local rules. Around the simulator sit a weak-form
//! residual verifier, the block approximation of general initial data, and
//! bound diagnostics.
//!
//! Module map:
//!
//! - [`road`]: lane profile `n*(x)`, speed ratio `α`, and `I_α(x)`.
//! - [`state`]: segments, field reconstruction, mass, total variation,
//!   admissibility checks.
//! - [`engine`]: next-event computation, handlers, trajectories.
//! - [`initial`]: general data, block approximation, scenario files.
//! - [`weak`]: test functions, the `J` moving-slab functional, residuals.
//! - [`diagnostics`]: maximum-principle and total-variation bound reports,
//!   convergence fits.
//! - [`quadrature`]: adaptive Gauss–Kronrod integration.

pub mod diagnostics;
pub mod engine;
pub mod initial;
pub mod quadrature;
pub mod road;
pub mod state;
pub mod weak;

/// Absolute tolerance on positions: two endpoints closer than this are in contact.
pub const EPS_X: f64 = 1e-9;

/// Events closer in time than this to the earliest pending event are processed together.
pub const EPS_T: f64 = 1e-9;

pub use engine::{Engine, EngineError, EngineOptions, Event, EventKind, Trajectory};
pub use initial::{GeneralData, Scenario, ScenarioError};
pub use road::{RoadError, RoadProfile};
pub use state::{ClusterState, Coupling, Segment, StateError, Violation};
