//! Distributed versus centralized planning on the same scenario.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::harness::engine::{run_with, RunOptions};
use crate::harness::metrics::RunMetrics;
use crate::harness::scenario::ScenarioSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub distributed: RunMetrics,
    pub centralized: RunMetrics,
    /// Centralized over distributed average round solve time.
    pub speedup: f64,
}

pub fn compare_centralized(spec: &ScenarioSpec) -> Result<ComparisonReport> {
    compare_with(spec, &RunOptions::default())
}

/// Runs `spec` twice, once per planner, with otherwise identical options.
pub fn compare_with(spec: &ScenarioSpec, options: &RunOptions) -> Result<ComparisonReport> {
    let distributed = run_with(
        spec,
        &RunOptions {
            centralized: false,
            ..options.clone()
        },
    )?
    .metrics;
    let centralized = run_with(
        spec,
        &RunOptions {
            centralized: true,
            ..options.clone()
        },
    )?
    .metrics;
    let speedup = centralized.avg_round_solve_time / distributed.avg_round_solve_time;
    Ok(ComparisonReport {
        distributed,
        centralized,
        speedup,
    })
}
