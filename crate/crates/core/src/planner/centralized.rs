//! Joint planning of all vehicles in one QP per iteration.
//!
//! Variables are `[x_1; s_1; x_2; s_2; ...]` in vehicle order. The pairwise
//! constraint `|x_i^h - x_j^h| - d_min >= 0` is linearized in both points
//! around the previous iterate: with `u` the unit vector from `x_j^(k)` to
//! `x_i^(k)` (or `(1, 0)` when they coincide), the half-space is
//! `u . (x_i^h - x_j^h) >= d_min`. The norm is convex, so this is an inner
//! approximation.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::planner::{quadratic_cost, stack, LaneLock, ObjectiveForm, PlanResult};
use crate::qp::{ActiveSetSolver, QpSettings, QpStatus, QuadraticProgram};
use crate::types::{PlannerWeights, Position2, Trajectory, VehicleState};

#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedConfig {
    /// Minimum center distance between any two vehicles. The simulation
    /// engine replaces it with `ScenarioSpec::centralized_margin`.
    pub d_min: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub qp: QpSettings,
}

impl Default for CentralizedConfig {
    fn default() -> Self {
        CentralizedConfig {
            d_min: 3.0,
            max_iters: 20,
            tol: 1e-3,
            qp: QpSettings {
                max_iterations: 5000,
                ..QpSettings::default()
            },
        }
    }
}

/// Iterates the joint convexified problem to convergence.
///
/// Returns one result per vehicle; all share the same wall-clock
/// `solve_time`, status and iteration count. If the joint QP turns
/// infeasible the previous iterate (initially the warm starts) is returned
/// with status `Infeasible`.
pub fn plan_centralized(
    states: &[VehicleState],
    warm_starts: &[Trajectory],
    references: &[Trajectory],
    weights: &PlannerWeights,
    lane_locks: &[Option<LaneLock>],
    config: &CentralizedConfig,
) -> Result<Vec<PlanResult>> {
    let count = states.len();
    if count < 2 {
        return Err(Error::TooFewStates {
            required: 2,
            actual: count,
        });
    }
    for (context, len) in [
        ("warm starts", warm_starts.len()),
        ("references", references.len()),
        ("lane locks", lane_locks.len()),
    ] {
        if len != count {
            return Err(Error::Dimension {
                context,
                expected: count,
                actual: len,
            });
        }
    }
    let horizon = warm_starts[0].len();
    let dt = warm_starts[0].sample_dt();
    if warm_starts
        .iter()
        .chain(references)
        .any(|t| t.len() != horizon)
    {
        return Err(Error::invalid(
            "centralized input",
            "all trajectories must share the horizon",
        ));
    }

    let started = Instant::now();
    let block = 2 * horizon + 2;
    let n = count * block;
    let mut cost = DMatrix::zeros(n, n);
    let mut linear = DVector::zeros(n);
    let single = quadratic_cost(horizon, dt, weights);
    for (i, reference) in references.iter().enumerate() {
        let form = ObjectiveForm::with_cost(single.clone(), reference, weights);
        cost.view_mut((i * block, i * block), (block, block))
            .copy_from(&form.cost);
        linear.rows_mut(i * block, block).copy_from(&form.linear);
    }
    let (eq_matrix, eq_rhs) = equality_rows(states, lane_locks, horizon);

    let mut solver = ActiveSetSolver::new(config.qp.clone());
    let mut iterates: Vec<Trajectory> = warm_starts.to_vec();
    let mut slacks: Vec<Position2> = iterates
        .iter()
        .zip(states)
        .map(|(t, s)| t.first() - s.position)
        .collect();
    let mut status = QpStatus::Optimal;
    let mut iterations = 0;

    for _ in 0..config.max_iters.max(1) {
        iterations += 1;
        let (ineq_matrix, ineq_rhs) = pair_constraints(&iterates, config.d_min, block);
        let qp = QuadraticProgram {
            cost: cost.clone(),
            linear: linear.clone(),
            ineq_matrix,
            ineq_rhs,
            eq_matrix: eq_matrix.clone(),
            eq_rhs: eq_rhs.clone(),
        };
        let mut start = DVector::zeros(n);
        for (i, (t, s)) in iterates.iter().zip(&slacks).enumerate() {
            start.rows_mut(i * block, block).copy_from(&stack(t, *s));
        }
        let sol = solver.solve(&qp, Some(&start));
        status = sol.status;
        let usable = match sol.status {
            QpStatus::Optimal => true,
            QpStatus::MaxIterations => qp.max_violation(&sol.z) <= config.qp.feasibility_tol,
            QpStatus::Infeasible => false,
        };
        if !usable {
            log::warn!(
                "plan_centralized: QP {:?}, keeping previous iterate",
                sol.status
            );
            break;
        }
        let mut change: f64 = 0.0;
        for i in 0..count {
            let z = sol.z.rows(i * block, block);
            let next = Trajectory::from_flat(&z.as_slice()[..2 * horizon], dt)
                .expect("solver output has the planned dimension");
            change = change.max(next.max_deviation(&iterates[i]));
            iterates[i] = next;
            slacks[i] = Position2::new(z[2 * horizon], z[2 * horizon + 1]);
        }
        if change < config.tol {
            break;
        }
    }

    let solve_time = started.elapsed().as_secs_f64();
    Ok(iterates
        .into_iter()
        .zip(slacks)
        .zip(references)
        .map(|((trajectory, slack), reference)| {
            let objective =
                ObjectiveForm::new(reference, weights).value(&stack(&trajectory, slack));
            PlanResult {
                trajectory,
                slack,
                solve_time,
                qp_status: status,
                cfs_iterations: iterations,
                objective,
                halfspaces: Vec::new(),
            }
        })
        .collect())
}

fn equality_rows(
    states: &[VehicleState],
    lane_locks: &[Option<LaneLock>],
    horizon: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    let block = 2 * horizon + 2;
    let rows: usize = lane_locks
        .iter()
        .map(|l| 2 + if l.is_some() { horizon } else { 0 })
        .sum();
    let mut e = DMatrix::zeros(rows, states.len() * block);
    let mut f = DVector::zeros(rows);
    let mut r = 0;
    for (i, (state, lock)) in states.iter().zip(lane_locks).enumerate() {
        let base = i * block;
        for axis in 0..2 {
            e[(r, base + axis)] = 1.0;
            e[(r, base + 2 * horizon + axis)] = -1.0;
            f[r] = if axis == 0 {
                state.position.x
            } else {
                state.position.y
            };
            r += 1;
        }
        if let Some(lock) = lock {
            for h in 0..horizon {
                e[(r, base + 2 * h)] = lock.normal.x;
                e[(r, base + 2 * h + 1)] = lock.normal.y;
                f[r] = lock.offset;
                r += 1;
            }
        }
    }
    (e, f)
}

fn pair_constraints(
    iterates: &[Trajectory],
    d_min: f64,
    block: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    let count = iterates.len();
    let horizon = iterates[0].len();
    let pairs = count * (count - 1) / 2;
    let mut a = DMatrix::zeros(pairs * horizon, count * block);
    let b = DVector::from_element(pairs * horizon, -d_min);
    let mut r = 0;
    for i in 0..count {
        for j in i + 1..count {
            for h in 0..horizon {
                let d = iterates[i].points()[h] - iterates[j].points()[h];
                let len = d.norm();
                let u = if len > 0.0 {
                    d * (1.0 / len)
                } else {
                    Position2::new(1.0, 0.0)
                };
                // u.(x_i - x_j) >= d_min  as  -u.x_i + u.x_j <= -d_min
                a[(r, i * block + 2 * h)] = -u.x;
                a[(r, i * block + 2 * h + 1)] = -u.y;
                a[(r, j * block + 2 * h)] = u.x;
                a[(r, j * block + 2 * h + 1)] = u.y;
                r += 1;
            }
        }
    }
    (a, b)
}
