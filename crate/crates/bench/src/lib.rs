//! Fixtures shared by the benchmarks.

use cfs_dmpc::harness::{formation, run, ControlMode, RoundLog, ScenarioSpec};
use cfs_dmpc::planner::{CentralizedConfig, NeighborPlan, Planner};
use cfs_dmpc::qp::QuadraticProgram;
use cfs_dmpc::{PlanResult, Trajectory, VehicleState};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// State of an `n`-vehicle formation after `rounds` rounds, mid-maneuver.
pub struct Snapshot {
    pub spec: ScenarioSpec,
    pub log: RoundLog,
}

impl Snapshot {
    pub fn formation(n: usize, rounds: usize) -> Self {
        let spec = formation(n, ControlMode::DirectPlacement, 0.1, 0.1, rounds);
        let log = run(&spec)
            .expect("formation runs")
            .logs
            .pop()
            .expect("at least one round");
        Snapshot { spec, log }
    }

    pub fn planner(&self, i: usize) -> Planner {
        let v = &self.spec.vehicles[i];
        Planner::new(v.geometry, self.spec.weights)
    }

    /// One distributed replan of vehicle `i` against everyone else's plan.
    pub fn plan_step(&self, planner: &mut Planner, i: usize) -> PlanResult {
        let me = &self.log.vehicles[i];
        let neighbors: Vec<NeighborPlan<'_>> = self
            .log
            .vehicles
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, v)| NeighborPlan {
                trajectory: &v.plan,
                heading: v.state.heading,
            })
            .collect();
        planner.plan_step(me.state.position, &me.plan, &neighbors, &me.reference)
    }

    pub fn plan_centralized(&self) -> Vec<PlanResult> {
        let states: Vec<VehicleState> = self.log.vehicles.iter().map(|v| v.state).collect();
        let plans: Vec<Trajectory> = self.log.vehicles.iter().map(|v| v.plan.clone()).collect();
        let refs: Vec<Trajectory> = self
            .log
            .vehicles
            .iter()
            .map(|v| v.reference.clone())
            .collect();
        let config = CentralizedConfig {
            d_min: self.spec.centralized_margin(),
            ..CentralizedConfig::default()
        };
        cfs_dmpc::planner::plan_centralized(
            &states,
            &plans,
            &refs,
            &self.spec.weights,
            &vec![None; states.len()],
            &config,
        )
        .expect("joint plan")
    }
}

/// Strictly convex QP with `n` variables and `m` inequalities, feasible
/// by construction.
pub fn random_qp(seed: u64, n: usize, m: usize) -> QuadraticProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unif = || rng.random_range(-1.0f64..1.0);
    let b = DMatrix::from_fn(n, n, |_, _| unif());
    let cost = b.transpose() * &b + DMatrix::identity(n, n);
    let linear = DVector::from_fn(n, |_, _| 5.0 * unif());
    let a = DMatrix::from_fn(m, n, |_, _| unif());
    let rhs = DVector::from_fn(m, |_, _| 0.5 + unif().abs());
    QuadraticProgram::new(
        cost,
        linear,
        a,
        rhs,
        DMatrix::zeros(0, n),
        DVector::zeros(0),
    )
    .expect("well-formed QP")
}
