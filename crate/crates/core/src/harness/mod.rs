//! Closed-loop simulation: scenarios, the round engine, metrics and export.

mod compare;
mod engine;
mod export;
mod metrics;
mod scenario;

pub use compare::{compare_centralized, compare_with, ComparisonReport};
pub use engine::{run, run_with, RoundLog, RunOptions, RunOutput, VehicleRound, CONSENSUS_TOL};
pub use export::{
    export, format_sig9, metrics_text, trajectory_csv, trajectory_svg, METRICS_FILE, SVG_FILE,
    TRAJECTORY_FILE,
};
pub use metrics::{compute_metrics, RunMetrics, VehicleMetrics, LANE_CHANGE_OFFSET};
pub use scenario::{
    builtin_scenario, formation, scenario_weights, validate, validate_scenario, ControlMode,
    DeadlockSettings, DistanceModeKind, Road, ScenarioSpec, VehicleSpec, BUILTIN_SCENARIOS,
    GOAL_TOLERANCE,
};
