//! Summary statistics of a run.

use serde::{Deserialize, Serialize};

use crate::harness::engine::RoundLog;
use crate::harness::scenario::{ScenarioSpec, GOAL_TOLERANCE};
use crate::qp::QpStatus;
use crate::types::VehicleState;

/// Rounds where a vehicle is farther than this from its reference path
/// count as lane changing for the cross-track average.
pub const LANE_CHANGE_OFFSET: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleMetrics {
    pub id: usize,
    pub avg_solve_time: f64,
    pub max_solve_time: f64,
    pub total_cost: f64,
    /// Closest approach to any other vehicle.
    pub min_distance: f64,
    pub trajectory_length: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_to_goal: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_cross_track_error: Option<f64>,
    pub non_optimal_solves: usize,
    pub deadlocked_rounds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scenario: String,
    pub planner: String,
    pub rounds: usize,
    pub avg_solve_time: f64,
    pub max_solve_time: f64,
    /// Mean over rounds of the per-round solve time (summed over vehicles
    /// when planning is distributed).
    pub avg_round_solve_time: f64,
    pub max_round_solve_time: f64,
    pub total_cost: f64,
    /// First round from which consensus holds to the end of the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consensus_round: Option<usize>,
    pub min_distance: f64,
    pub safety_margin: f64,
    pub collision_free: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_cross_track_error: Option<f64>,
    pub vehicles: Vec<VehicleMetrics>,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn compute_metrics(
    spec: &ScenarioSpec,
    logs: &[RoundLog],
    final_states: &[VehicleState],
    centralized: bool,
) -> RunMetrics {
    let count = spec.vehicles.len();
    let rounds = logs.len();
    let mut trajectories: Vec<Vec<VehicleState>> = vec![Vec::with_capacity(rounds + 1); count];
    for log in logs {
        for (i, v) in log.vehicles.iter().enumerate() {
            trajectories[i].push(v.state);
        }
    }
    for (i, s) in final_states.iter().enumerate() {
        trajectories[i].push(*s);
    }

    let mut all_cross = Vec::new();
    let mut vehicles = Vec::with_capacity(count);
    for (i, vs) in spec.vehicles.iter().enumerate() {
        let entries: Vec<_> = logs.iter().map(|l| &l.vehicles[i]).collect();
        let times: Vec<f64> = entries.iter().map(|e| e.solve_time).collect();
        let cross: Vec<f64> = entries
            .iter()
            .filter(|e| e.lateral_offset > LANE_CHANGE_OFFSET)
            .map(|e| e.cross_track_error)
            .collect();
        all_cross.extend_from_slice(&cross);

        let path_end = *vs.path.last().expect("validated path");
        let time_to_goal = trajectories[i]
            .iter()
            .position(|s| s.position.distance(path_end) <= GOAL_TOLERANCE)
            .map(|k| k as f64 * spec.replan_dt);
        let mut min_distance = f64::INFINITY;
        for step in 0..trajectories[i].len() {
            for (j, other) in trajectories.iter().enumerate() {
                if j != i {
                    min_distance = min_distance.min(
                        trajectories[i][step]
                            .position
                            .distance(other[step].position),
                    );
                }
            }
        }
        vehicles.push(VehicleMetrics {
            id: vs.id,
            avg_solve_time: mean(&times).unwrap_or(0.0),
            max_solve_time: times.iter().copied().fold(0.0, f64::max),
            total_cost: entries.iter().map(|e| e.cost).sum(),
            min_distance,
            trajectory_length: trajectories[i]
                .windows(2)
                .map(|w| w[0].position.distance(w[1].position))
                .sum(),
            time_to_goal,
            mean_cross_track_error: mean(&cross),
            non_optimal_solves: entries
                .iter()
                .filter(|e| e.qp_status != QpStatus::Optimal)
                .count(),
            deadlocked_rounds: entries.iter().filter(|e| e.deadlock.is_deadlocked).count(),
        });
    }

    let round_times: Vec<f64> = logs.iter().map(|l| l.round_solve_time).collect();
    let consensus_round = match logs.iter().rposition(|l| !l.consensus) {
        None if !logs.is_empty() => Some(0),
        Some(k) if k + 1 < logs.len() => Some(k + 1),
        _ => None,
    };
    let min_distance = vehicles
        .iter()
        .map(|v| v.min_distance)
        .fold(f64::INFINITY, f64::min);
    let safety_margin = spec.safety_margin();
    RunMetrics {
        scenario: spec.name.clone(),
        planner: if centralized {
            "centralized"
        } else {
            "distributed"
        }
        .to_string(),
        rounds,
        avg_solve_time: mean(
            &vehicles
                .iter()
                .map(|v| v.avg_solve_time)
                .collect::<Vec<_>>(),
        )
        .unwrap_or(0.0),
        max_solve_time: vehicles
            .iter()
            .map(|v| v.max_solve_time)
            .fold(0.0, f64::max),
        avg_round_solve_time: mean(&round_times).unwrap_or(0.0),
        max_round_solve_time: round_times.iter().copied().fold(0.0, f64::max),
        total_cost: vehicles.iter().map(|v| v.total_cost).sum(),
        consensus_round,
        min_distance,
        safety_margin,
        collision_free: !(min_distance < safety_margin),
        mean_cross_track_error: mean(&all_cross),
        vehicles,
    }
}
