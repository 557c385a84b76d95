//! Per-vehicle trajectory planning.
//!
//! [`Planner::plan_step`] solves the convexified subproblem once: the
//! collision constraint against every neighbor rectangle at every sample is
//! replaced by its half-space linearization around the warm start, and the
//! first waypoint is tied to the current position through a penalized slack.
//! [`Planner::cfs_solve`] repeats that step until the plan stops moving, and
//! [`centralized`] solves the joint problem for all vehicles at once.

pub mod centralized;
pub mod objective;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::geometry::{cfs_halfspace, line_halfspaces, neighbor_rect, HalfSpace, OrientedRect};
use crate::qp::{ActiveSetSolver, QpSettings, QpStatus, QuadraticProgram};
use crate::types::{PlannerWeights, Position2, Trajectory, VehicleGeometry};

pub use centralized::{plan_centralized, CentralizedConfig};
pub use objective::{
    build_acceleration_operator, build_reference, quadratic_cost, stack, total_cost, vehicle_cost,
    ObjectiveForm,
};

/// A neighbor's most recent broadcast plan.
#[derive(Debug, Clone, Copy)]
pub struct NeighborPlan<'a> {
    pub trajectory: &'a Trajectory,
    /// Orientation used when a plan segment is too short to define one.
    pub heading: f64,
}

/// Restricts every waypoint to the line `normal . x = offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneLock {
    pub normal: Position2,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub trajectory: Trajectory,
    pub slack: Position2,
    /// Wall-clock seconds spent building and solving.
    pub solve_time: f64,
    pub qp_status: QpStatus,
    pub cfs_iterations: usize,
    pub objective: f64,
    /// Half-spaces of the last solved subproblem, indexed by waypoint.
    pub halfspaces: Vec<Vec<HalfSpace>>,
}

/// `Q` with the horizon, sampling time and weights it was built for.
type CostCache = (usize, f64, PlannerWeights, DMatrix<f64>);

/// Planner for one vehicle; owns its QP workspace.
#[derive(Debug, Clone)]
pub struct Planner {
    pub geometry: VehicleGeometry,
    pub weights: PlannerWeights,
    pub lane_lock: Option<LaneLock>,
    solver: ActiveSetSolver,
    cost_cache: Option<CostCache>,
}

/// Warm-start points closer than this to a neighbor's center are nudged
/// before linearizing.
const COINCIDENT_TOL: f64 = 1e-6;

impl Planner {
    pub fn new(geometry: VehicleGeometry, weights: PlannerWeights) -> Self {
        Planner {
            geometry,
            weights,
            lane_lock: None,
            solver: ActiveSetSolver::default(),
            cost_cache: None,
        }
    }

    pub fn with_lane_lock(mut self, lock: Option<LaneLock>) -> Self {
        self.lane_lock = lock;
        self
    }

    pub fn with_qp_settings(mut self, settings: QpSettings) -> Self {
        self.solver = ActiveSetSolver::new(settings);
        self
    }

    fn cost(&mut self, horizon: usize, dt: f64) -> DMatrix<f64> {
        let weights = self.weights;
        match &self.cost_cache {
            Some((h, t, w, q)) if *h == horizon && *t == dt && *w == weights => q.clone(),
            _ => {
                let q = quadratic_cost(horizon, dt, &weights);
                self.cost_cache = Some((horizon, dt, weights, q.clone()));
                q
            }
        }
    }

    /// Linearized collision constraints around `warm_start`, one list per
    /// waypoint. Lane-locked vehicles get the exact constraints along their
    /// lane instead.
    pub fn halfspaces(
        &self,
        warm_start: &Trajectory,
        neighbors: &[NeighborPlan<'_>],
    ) -> Vec<Vec<HalfSpace>> {
        let g = &self.geometry;
        (0..warm_start.len())
            .map(|h| {
                let rects: Vec<OrientedRect> = neighbors
                    .iter()
                    .map(|nb| {
                        neighbor_rect(
                            nb.trajectory,
                            h.min(nb.trajectory.len() - 1),
                            nb.heading,
                            g.l,
                            g.w,
                        )
                    })
                    .collect();
                let x_k = warm_start.points()[h];
                if let Some(lock) = self.lane_lock {
                    let origin = lock.normal * (lock.offset / lock.normal.dot(lock.normal));
                    let dir = lock.normal.rotate(-std::f64::consts::FRAC_PI_2);
                    return line_halfspaces(x_k, origin, dir, &rects, g.r);
                }
                rects
                    .iter()
                    .zip(neighbors)
                    .map(|(rect, nb)| {
                        // On the neighbor's center the interior subgradient is
                        // decided by rounding noise; lean toward the side the
                        // ego vehicle is currently on instead.
                        let mut x_k = x_k;
                        if x_k.distance(rect.center) < COINCIDENT_TOL {
                            let side = warm_start.points()[0] - nb.trajectory.points()[0];
                            let len = side.norm();
                            if len > COINCIDENT_TOL {
                                x_k += side * (COINCIDENT_TOL / len);
                            }
                        }
                        cfs_halfspace(x_k, rect, g.r)
                    })
                    .collect()
            })
            .collect()
    }

    /// One convexified solve around `warm_start`.
    ///
    /// On an infeasible subproblem the warm start is returned unchanged with
    /// status `Infeasible`.
    pub fn plan_step(
        &mut self,
        current: Position2,
        warm_start: &Trajectory,
        neighbors: &[NeighborPlan<'_>],
        reference: &Trajectory,
    ) -> PlanResult {
        let started = Instant::now();
        let horizon = warm_start.len();
        let dt = warm_start.sample_dt();
        let n = 2 * horizon + 2;
        let form = ObjectiveForm::with_cost(self.cost(horizon, dt), reference, &self.weights);
        let halfspaces = self.halfspaces(warm_start, neighbors);

        let m: usize = halfspaces.iter().map(Vec::len).sum();
        let mut a = DMatrix::zeros(m, n);
        let mut b = DVector::zeros(m);
        let mut row = 0;
        for (h, list) in halfspaces.iter().enumerate() {
            for hs in list {
                // normal . x_h >= offset  as  -normal . x_h <= -offset
                a[(row, 2 * h)] = -hs.normal.x;
                a[(row, 2 * h + 1)] = -hs.normal.y;
                b[row] = -hs.offset;
                row += 1;
            }
        }

        let p = 2 + if self.lane_lock.is_some() { horizon } else { 0 };
        let mut e = DMatrix::zeros(p, n);
        let mut f = DVector::zeros(p);
        // x_1 - s = current
        e[(0, 0)] = 1.0;
        e[(0, 2 * horizon)] = -1.0;
        e[(1, 1)] = 1.0;
        e[(1, 2 * horizon + 1)] = -1.0;
        f[0] = current.x;
        f[1] = current.y;
        if let Some(lock) = self.lane_lock {
            for h in 0..horizon {
                e[(2 + h, 2 * h)] = lock.normal.x;
                e[(2 + h, 2 * h + 1)] = lock.normal.y;
                f[2 + h] = lock.offset;
            }
        }

        let qp = QuadraticProgram {
            cost: form.cost,
            linear: form.linear,
            ineq_matrix: a,
            ineq_rhs: b,
            eq_matrix: e,
            eq_rhs: f,
        };
        let start = stack(warm_start, warm_start.first() - current);
        let sol = self.solver.solve(&qp, Some(&start));

        // An iteration-capped primal iterate is still feasible, so it is kept.
        let usable = match sol.status {
            QpStatus::Optimal => true,
            QpStatus::MaxIterations => {
                qp.max_violation(&sol.z) <= self.solver.settings().feasibility_tol
            }
            QpStatus::Infeasible => false,
        };
        let (trajectory, slack, objective) = if usable {
            let traj = Trajectory::from_flat(&sol.z.as_slice()[..2 * horizon], dt)
                .expect("solver output has the planned dimension");
            let slack = Position2::new(sol.z[2 * horizon], sol.z[2 * horizon + 1]);
            (traj, slack, sol.objective_value)
        } else {
            log::warn!("plan_step: QP {:?}, keeping previous plan", sol.status);
            (
                warm_start.clone(),
                warm_start.first() - current,
                qp.objective(&start),
            )
        };
        PlanResult {
            trajectory,
            slack,
            solve_time: started.elapsed().as_secs_f64(),
            qp_status: sol.status,
            cfs_iterations: 1,
            objective,
            halfspaces,
        }
    }

    /// Repeats [`plan_step`](Self::plan_step) from `initial` until the
    /// largest waypoint change drops below `tol` or `max_iters` solves ran.
    pub fn cfs_solve(
        &mut self,
        current: Position2,
        initial: &Trajectory,
        neighbors: &[NeighborPlan<'_>],
        reference: &Trajectory,
        max_iters: usize,
        tol: f64,
    ) -> PlanResult {
        self.cfs_solve_traced(current, initial, neighbors, reference, max_iters, tol)
            .0
    }

    /// Like [`cfs_solve`](Self::cfs_solve), also returning the objective
    /// after every iteration.
    pub fn cfs_solve_traced(
        &mut self,
        current: Position2,
        initial: &Trajectory,
        neighbors: &[NeighborPlan<'_>],
        reference: &Trajectory,
        max_iters: usize,
        tol: f64,
    ) -> (PlanResult, Vec<f64>) {
        let started = Instant::now();
        let mut history = Vec::new();
        let mut iterate = initial.clone();
        let mut result = None;
        for k in 1..=max_iters.max(1) {
            let mut step = self.plan_step(current, &iterate, neighbors, reference);
            step.cfs_iterations = k;
            history.push(step.objective);
            let change = step.trajectory.max_deviation(&iterate);
            let stop = step.qp_status == QpStatus::Infeasible || !(change >= tol);
            iterate = step.trajectory.clone();
            result = Some(step);
            if stop {
                break;
            }
        }
        let mut result = result.expect("at least one iteration");
        result.solve_time = started.elapsed().as_secs_f64();
        (result, history)
    }
}
