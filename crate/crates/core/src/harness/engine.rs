//! Synchronous-round simulation.
//!
//! Every round all vehicles read the plans broadcast at the end of the
//! previous round, so planning within a round is order independent and the
//! per-vehicle solves can run in parallel.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::deadlock::{
    assign_priorities, check_consensus, detect, maybe_revert, reference_offset, resolve,
    DeadlockStatus, DistanceMode, PriorityCandidate, SpeedAssignment,
};
use crate::error::{Error, Result};
use crate::geometry::{min_pairwise_distance, MIN_SEGMENT_FOR_HEADING};
use crate::harness::metrics::{compute_metrics, RunMetrics};
use crate::harness::scenario::{validate, ControlMode, DistanceModeKind, ScenarioSpec};
use crate::planner::{
    build_reference, plan_centralized, vehicle_cost, CentralizedConfig, NeighborPlan, PlanResult,
    Planner,
};
use crate::qp::{QpSettings, QpStatus};
use crate::types::{Position2, ReferencePath, Trajectory, V2VMessage, VehicleState};
use crate::vehicle::{distance_to_polyline, kinematic_step, tracking_control};

/// Plans must end this close to their reference for consensus.
pub const CONSENSUS_TOL: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub deadlock_resolution: bool,
    /// Plan all vehicles jointly each round instead of one QP per vehicle.
    pub centralized: bool,
    pub centralized_config: CentralizedConfig,
    pub qp: QpSettings,
    pub parallel: bool,
    /// Visit vehicles in reverse order when planning; results must not change.
    pub reverse_order: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            deadlock_resolution: true,
            centralized: false,
            centralized_config: CentralizedConfig::default(),
            qp: QpSettings::default(),
            parallel: true,
            reverse_order: false,
        }
    }
}

impl RunOptions {
    pub fn with_qp_dump(mut self, dir: Option<PathBuf>) -> Self {
        self.qp.dump_dir = dir.clone();
        self.centralized_config.qp.dump_dir = dir;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VehicleRound {
    pub id: usize,
    /// State at the start of the round, used for planning.
    pub state: VehicleState,
    pub plan: Trajectory,
    pub slack: Position2,
    pub reference: Trajectory,
    pub solve_time: f64,
    pub qp_status: QpStatus,
    pub deadlock: DeadlockStatus,
    /// Desired speed differs from the base speed because of a resolution.
    pub speed_modified: bool,
    pub desired_speed: f64,
    pub cost: f64,
    /// Distance from the post-step position to this round's plan.
    pub cross_track_error: f64,
    /// Distance from the start-of-round position to the reference path.
    pub lateral_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundLog {
    pub round: usize,
    pub time: f64,
    pub vehicles: Vec<VehicleRound>,
    pub min_pairwise_distance: f64,
    pub consensus: bool,
    /// Distributed: sum of the per-vehicle solve times. Centralized: the
    /// joint solve time.
    pub round_solve_time: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub spec: ScenarioSpec,
    pub logs: Vec<RoundLog>,
    pub final_states: Vec<VehicleState>,
    pub metrics: RunMetrics,
    pub wall_time: f64,
}

pub fn run(spec: &ScenarioSpec) -> Result<RunOutput> {
    run_with(spec, &RunOptions::default())
}

struct Agent {
    id: usize,
    path: ReferencePath,
    base_speed: f64,
    mode: DistanceMode,
    planner: Planner,
}

impl Agent {
    /// Progress is arc length along the vehicle's own path, so paths that
    /// share an origin line compare directly.
    fn candidate(&self, state: &VehicleState, status: &DeadlockStatus) -> PriorityCandidate {
        PriorityCandidate {
            id: self.id,
            progress: self.path.project(state.position).arc_length,
            tail_mean_distance: status.tail_mean_distance,
            side: self.path.side_of(state.position, 1e-6),
        }
    }
}

fn initial_states(spec: &ScenarioSpec) -> Result<Vec<VehicleState>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    spec.vehicles
        .iter()
        .map(|v| {
            let mut s = v.initial_state()?;
            if spec.initial_jitter > 0.0 {
                let j = spec.initial_jitter;
                s.position += Position2::new(rng.random_range(-j..=j), rng.random_range(-j..=j));
            }
            Ok(s)
        })
        .collect()
}

/// Runs the scenario for `spec.total_rounds` rounds.
pub fn run_with(spec: &ScenarioSpec, options: &RunOptions) -> Result<RunOutput> {
    validate(spec)?;
    if options.centralized && spec.vehicles.len() < 2 {
        return Err(Error::TooFewStates {
            required: 2,
            actual: spec.vehicles.len(),
        });
    }
    let started = Instant::now();
    let h = spec.horizon;
    let ts = spec.sample_dt;
    let deadlock_cfg = spec.deadlock.config();
    let margin = spec.safety_margin();

    let mut agents: Vec<Agent> = spec
        .vehicles
        .iter()
        .map(|v| {
            let mode = match spec.deadlock.mode {
                DistanceModeKind::Path => DistanceMode::PathDistance,
                DistanceModeKind::ExitPoint => {
                    DistanceMode::ExitPointDistance(v.exit_point.expect("validated exit point"))
                }
            };
            Ok(Agent {
                id: v.id,
                path: v.reference_path()?,
                base_speed: v.desired_speed,
                mode,
                planner: Planner::new(v.geometry, spec.weights)
                    .with_lane_lock(v.lane_lock)
                    .with_qp_settings(options.qp.clone()),
            })
        })
        .collect::<Result<_>>()?;

    let mut states = initial_states(spec)?;
    let base_speeds: BTreeMap<usize, f64> = agents.iter().map(|a| (a.id, a.base_speed)).collect();
    let mut assignment = SpeedAssignment::unchanged(&base_speeds);
    let mut managed: BTreeSet<usize> = BTreeSet::new();

    // initial broadcast: every vehicle announces it keeps its current
    // heading and speed
    let mut inbox: Vec<V2VMessage> = agents
        .iter()
        .zip(&states)
        .map(|(a, s)| {
            Ok(V2VMessage {
                sender_id: a.id,
                round: 0,
                trajectory: extrapolate(s, h, ts)?,
                heading: s.heading,
            })
        })
        .collect::<Result<_>>()?;
    let mut last_references: Vec<Trajectory> = agents
        .iter()
        .zip(&states)
        .map(|(a, s)| build_reference(&a.path, s.position, a.base_speed, h, ts))
        .collect::<Result<_>>()?;

    let mut logs = Vec::with_capacity(spec.total_rounds);
    for round in 0..spec.total_rounds {
        // deadlock check and speed changes, from the previous round's plans
        // round 0 has no plan of its own yet, only the initial broadcast
        let statuses: Vec<DeadlockStatus> = agents
            .iter()
            .zip(&inbox)
            .map(|(a, m)| match round {
                0 => DeadlockStatus {
                    is_deadlocked: false,
                    tail_mean_distance: 0.0,
                    tail_spread: 0.0,
                },
                _ => detect(&m.trajectory, &a.path, &deadlock_cfg, a.mode),
            })
            .collect();
        if options.deadlock_resolution && spec.deadlock.enabled {
            for (i, a) in agents.iter().enumerate() {
                let tol = spec.deadlock.revert_tol;
                if managed.contains(&a.id)
                    && reference_offset(&inbox[i].trajectory, &last_references[i]) <= tol
                {
                    assignment = maybe_revert(
                        &assignment,
                        a.id,
                        &inbox[i].trajectory,
                        &last_references[i],
                        tol,
                    );
                    log::debug!("round {round}: vehicle {} back to its original speed", a.id);
                    managed.remove(&a.id);
                }
            }
            let fresh: Vec<usize> = (0..agents.len())
                .filter(|&i| statuses[i].is_deadlocked && !managed.contains(&agents[i].id))
                .collect();
            if !fresh.is_empty() {
                let group: Vec<usize> = (0..agents.len())
                    .filter(|&i| fresh.contains(&i) || managed.contains(&agents[i].id))
                    .collect();
                let candidates: Vec<PriorityCandidate> = group
                    .iter()
                    .map(|&i| agents[i].candidate(&states[i], &statuses[i]))
                    .collect();
                let order = assign_priorities(&candidates);
                assignment = resolve(&order, &base_speeds, &spec.deadlock.ladder, &spec.name)?;
                log::info!("round {round}: deadlock, priority order {order:?}");
                managed = order.into_iter().collect();
            }
        }

        let speeds: Vec<f64> = agents
            .iter()
            .map(|a| assignment.speed(a.id).unwrap_or(a.base_speed))
            .collect();
        let references: Vec<Trajectory> = agents
            .iter()
            .zip(&states)
            .zip(&speeds)
            .map(|((a, s), &v)| build_reference(&a.path, s.position, v, h, ts))
            .collect::<Result<_>>()?;

        let (results, round_solve_time) = if options.centralized {
            plan_jointly(&agents, &states, &inbox, &references, spec, options)?
        } else {
            let results = plan_distributed(&mut agents, &states, &inbox, &references, options);
            let total = results.iter().map(|r| r.solve_time).sum();
            (results, total)
        };

        let plans: Vec<Trajectory> = results.iter().map(|r| r.trajectory.clone()).collect();
        let consensus = check_consensus(&plans, &references, margin, CONSENSUS_TOL);
        let min_distance = if states.len() > 1 {
            min_pairwise_distance(&states)?
        } else {
            f64::INFINITY
        };

        let mut next_states = Vec::with_capacity(states.len());
        let mut vehicles = Vec::with_capacity(states.len());
        for (i, (a, res)) in agents.iter().zip(results).enumerate() {
            let state = states[i];
            let next = advance(spec, &state, &res.trajectory, speeds[i]);
            vehicles.push(VehicleRound {
                id: a.id,
                state,
                cost: vehicle_cost(&res.trajectory, res.slack, &references[i], &spec.weights)?,
                cross_track_error: distance_to_polyline(next.position, &res.trajectory),
                lateral_offset: a.path.project(state.position).distance,
                plan: res.trajectory,
                slack: res.slack,
                reference: references[i].clone(),
                solve_time: res.solve_time,
                qp_status: res.qp_status,
                deadlock: statuses[i],
                speed_modified: speeds[i] != a.base_speed,
                desired_speed: speeds[i],
            });
            next_states.push(next);
        }

        inbox = vehicles
            .iter()
            .zip(&next_states)
            .map(|(v, s)| V2VMessage {
                sender_id: v.id,
                round: round as u64,
                trajectory: v.plan.clone(),
                heading: s.heading,
            })
            .collect();
        last_references = references;
        states = next_states;
        logs.push(RoundLog {
            round,
            time: round as f64 * spec.replan_dt,
            vehicles,
            min_pairwise_distance: min_distance,
            consensus,
            round_solve_time,
        });
    }

    let metrics = compute_metrics(spec, &logs, &states, options.centralized);
    Ok(RunOutput {
        spec: spec.clone(),
        logs,
        final_states: states,
        metrics,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

/// Constant-velocity straight-line plan from `state`.
pub fn extrapolate(state: &VehicleState, horizon: usize, sample_dt: f64) -> Result<Trajectory> {
    let step = Position2::from_polar(state.speed * sample_dt, state.heading);
    Trajectory::new(
        (0..horizon)
            .map(|k| state.position + step * k as f64)
            .collect(),
        sample_dt,
    )
}

fn neighbors_of(inbox: &[V2VMessage], i: usize) -> Vec<NeighborPlan<'_>> {
    inbox
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, m)| NeighborPlan {
            trajectory: &m.trajectory,
            heading: m.heading,
        })
        .collect()
}

fn plan_distributed(
    agents: &mut [Agent],
    states: &[VehicleState],
    inbox: &[V2VMessage],
    references: &[Trajectory],
    options: &RunOptions,
) -> Vec<PlanResult> {
    let plan_one = |i: usize, agent: &mut Agent| {
        let neighbors = neighbors_of(inbox, i);
        let res = agent.planner.plan_step(
            states[i].position,
            &inbox[i].trajectory,
            &neighbors,
            &references[i],
        );
        if res.qp_status != QpStatus::Optimal {
            log::warn!("vehicle {}: QP status {:?}", agent.id, res.qp_status);
        }
        res
    };
    if options.parallel {
        agents
            .par_iter_mut()
            .enumerate()
            .map(|(i, a)| plan_one(i, a))
            .collect()
    } else {
        let mut slots: Vec<Option<PlanResult>> = vec![None; agents.len()];
        let mut order: Vec<usize> = (0..agents.len()).collect();
        if options.reverse_order {
            order.reverse();
        }
        for i in order {
            slots[i] = Some(plan_one(i, &mut agents[i]));
        }
        slots
            .into_iter()
            .map(|s| s.expect("every vehicle planned"))
            .collect()
    }
}

fn plan_jointly(
    agents: &[Agent],
    states: &[VehicleState],
    inbox: &[V2VMessage],
    references: &[Trajectory],
    spec: &ScenarioSpec,
    options: &RunOptions,
) -> Result<(Vec<PlanResult>, f64)> {
    let warm: Vec<Trajectory> = inbox.iter().map(|m| m.trajectory.clone()).collect();
    let locks: Vec<_> = agents.iter().map(|a| a.planner.lane_lock).collect();
    let config = CentralizedConfig {
        d_min: spec.centralized_margin(),
        ..options.centralized_config.clone()
    };
    let results = plan_centralized(states, &warm, references, &spec.weights, &locks, &config)?;
    let time = results.first().map_or(0.0, |r| r.solve_time);
    Ok((results, time))
}

/// Moves one vehicle over one replanning interval.
fn advance(
    spec: &ScenarioSpec,
    state: &VehicleState,
    plan: &Trajectory,
    desired_speed: f64,
) -> VehicleState {
    match spec.control_mode {
        ControlMode::DirectPlacement => {
            let p = plan.points();
            let step = p[1] - p[0];
            VehicleState {
                position: p[1],
                speed: step.norm() / plan.sample_dt(),
                heading: step
                    .heading(MIN_SEGMENT_FOR_HEADING)
                    .unwrap_or(state.heading),
            }
        }
        ControlMode::TrackedControl => {
            let input = tracking_control(state, plan, desired_speed, &spec.controller);
            kinematic_step(state, input, &spec.plant, spec.replan_dt)
        }
    }
}
