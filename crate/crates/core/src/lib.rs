//! Distributed model predictive control for multi-vehicle motion
//! coordination using convex feasible sets.
//!
//! Each vehicle plans its own trajectory by solving one quadratic program
//! per replanning interval. Collision constraints against the broadcast
//! plans of the other vehicles are convexified by linearizing the signed
//! distance to each neighbor's rectangle around the previous plan, which
//! yields half-spaces that are inner approximations of the true constraint.
//! Deadlocks (vehicles travelling in parallel, stuck off their target lane)
//! are detected from the tail of each plan and broken by reassigning desired
//! speeds in priority order.
//!
//! The [`harness`] module runs closed-loop simulations with kinematic
//! bicycle plants, and ships the six built-in scenarios.

// `!(x >= y)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod deadlock;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod planner;
pub mod qp;
pub mod types;
pub mod vehicle;

pub use error::{Error, Result};
pub use geometry::{HalfSpace, OrientedRect};
pub use harness::{RunMetrics, ScenarioSpec};
pub use planner::PlanResult;
pub use qp::{QpSolution, QpStatus, QuadraticProgram};
pub use types::{
    DeadlockConfig, PlannerWeights, Position2, ReferencePath, Trajectory, V2VMessage,
    VehicleGeometry, VehicleState,
};
