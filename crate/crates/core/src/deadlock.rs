//! Deadlock detection and resolution.
//!
//! A vehicle is considered stuck when the last `n` points of its plan keep
//! an almost constant, non-trivial distance to where it wants to be: the
//! spread of those distances is at most `eps1` and their mean is at least
//! `eps2`. Stuck vehicles are ranked and given distinct desired speeds from
//! a ladder of multipliers, which makes their reference trajectories differ
//! and breaks the symmetry. A vehicle returns to its original speed once its
//! plan is back on its reference.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{DeadlockConfig, Position2, ReferencePath, Side, Trajectory};
use crate::vehicle::distance_to_polyline;

/// Default speed multipliers, highest priority first.
pub const DEFAULT_LADDER: [f64; 4] = [2.5, 2.0, 1.5, 1.0];

/// Default plan-to-reference deviation below which the original speed is restored.
pub const DEFAULT_REVERT_TOL: f64 = 0.1;

/// Priority keys are compared at this resolution (meters).
const PRIORITY_RESOLUTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "point")]
pub enum DistanceMode {
    /// Perpendicular distance to the reference polyline.
    PathDistance,
    /// Euclidean distance to a fixed point, such as where the outgoing lane
    /// leaves an intersection.
    ExitPointDistance(Position2),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeadlockStatus {
    pub is_deadlocked: bool,
    pub tail_mean_distance: f64,
    pub tail_spread: f64,
}

/// Distances of the last `n` plan points under `mode`.
pub fn tail_distances(
    plan: &Trajectory,
    path: &ReferencePath,
    n: usize,
    mode: DistanceMode,
) -> Vec<f64> {
    plan.tail(n)
        .iter()
        .map(|p| match mode {
            DistanceMode::PathDistance => path.project(*p).distance,
            DistanceMode::ExitPointDistance(exit) => p.distance(exit),
        })
        .collect()
}

/// Applies the spread/mean criterion to precomputed tail distances.
pub fn evaluate(distances: &[f64], config: &DeadlockConfig) -> DeadlockStatus {
    if distances.is_empty() {
        return DeadlockStatus {
            is_deadlocked: false,
            tail_mean_distance: 0.0,
            tail_spread: 0.0,
        };
    }
    let max = distances.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = distances.iter().sum::<f64>() / distances.len() as f64;
    let spread = (max - min).abs();
    DeadlockStatus {
        is_deadlocked: spread <= config.eps1 && mean.abs() >= config.eps2,
        tail_mean_distance: mean,
        tail_spread: spread,
    }
}

pub fn detect(
    plan: &Trajectory,
    path: &ReferencePath,
    config: &DeadlockConfig,
    mode: DistanceMode,
) -> DeadlockStatus {
    evaluate(&tail_distances(plan, path, config.n, mode), config)
}

/// One deadlocked vehicle as seen by the priority rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorityCandidate {
    pub id: usize,
    /// Arc-length progress; larger means further in front.
    pub progress: f64,
    pub tail_mean_distance: f64,
    pub side: Side,
}

impl PriorityCandidate {
    /// Candidate whose progress is its position projected on a shared
    /// travel direction.
    pub fn along(
        id: usize,
        position: Position2,
        travel_direction: Position2,
        tail_mean_distance: f64,
        side: Side,
    ) -> Self {
        PriorityCandidate {
            id,
            progress: position.dot(travel_direction),
            tail_mean_distance,
            side,
        }
    }
}

fn side_rank(side: Side) -> u8 {
    match side {
        Side::Left => 0,
        Side::Right => 1,
        Side::OnPath => 2,
    }
}

fn quantize(v: f64) -> i64 {
    (v / PRIORITY_RESOLUTION).round() as i64
}

/// Orders candidates, highest priority first: front vehicle first, then
/// smaller mean tail distance, then left before right, then lower id.
pub fn assign_priorities(candidates: &[PriorityCandidate]) -> Vec<usize> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| {
        quantize(b.progress)
            .cmp(&quantize(a.progress))
            .then(quantize(a.tail_mean_distance).cmp(&quantize(b.tail_mean_distance)))
            .then(side_rank(a.side).cmp(&side_rank(b.side)))
            .then(a.id.cmp(&b.id))
            .then(Ordering::Equal)
    });
    sorted.into_iter().map(|c| c.id).collect()
}

/// Desired speeds after a deadlock resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedAssignment {
    pub speeds: BTreeMap<usize, f64>,
    pub original_speeds: BTreeMap<usize, f64>,
}

impl SpeedAssignment {
    /// Every vehicle at its base speed.
    pub fn unchanged(base_speeds: &BTreeMap<usize, f64>) -> Self {
        SpeedAssignment {
            speeds: base_speeds.clone(),
            original_speeds: base_speeds.clone(),
        }
    }

    pub fn speed(&self, id: usize) -> Option<f64> {
        self.speeds.get(&id).copied()
    }

    /// Whether `id` currently runs at something other than its original speed
    /// assignment (including rank-assigned speeds that equal it).
    pub fn is_reverted(&self, id: usize) -> bool {
        self.speeds.get(&id) == self.original_speeds.get(&id)
    }
}

/// Assigns `base * ladder[rank]` to each vehicle in `priorities`; every other
/// vehicle in `base_speeds` keeps its base speed.
pub fn resolve(
    priorities: &[usize],
    base_speeds: &BTreeMap<usize, f64>,
    ladder: &[f64],
    scenario: &str,
) -> Result<SpeedAssignment> {
    if priorities.len() > ladder.len() {
        return Err(Error::LadderExhausted {
            scenario: scenario.to_string(),
            ladder: ladder.len(),
            needed: priorities.len(),
        });
    }
    let mut out = SpeedAssignment::unchanged(base_speeds);
    for (&id, &mult) in priorities.iter().zip(ladder) {
        let base = *base_speeds.get(&id).ok_or_else(|| {
            Error::invalid(
                "speed assignment",
                format!("no base speed for vehicle {id}"),
            )
        })?;
        let speed = base * mult;
        if !(speed > 0.0) {
            return Err(Error::invalid(
                "speed assignment",
                format!("vehicle {id} would get non-positive speed {speed}"),
            ));
        }
        out.speeds.insert(id, speed);
    }
    Ok(out)
}

/// Largest distance from a plan point to the polyline through `reference`.
///
/// Unlike a sample-by-sample comparison this ignores how far along the
/// reference a point sits, so a plan held back by a slower vehicle on the
/// target lane still counts as being on its reference.
pub fn reference_offset(plan: &Trajectory, reference: &Trajectory) -> f64 {
    plan.points()
        .iter()
        .map(|&p| distance_to_polyline(p, reference))
        .fold(0.0, f64::max)
}

/// Restores `id`'s original speed when every plan point lies within `tol`
/// of the reference polyline.
pub fn maybe_revert(
    assignment: &SpeedAssignment,
    id: usize,
    plan: &Trajectory,
    reference: &Trajectory,
    tol: f64,
) -> SpeedAssignment {
    let mut out = assignment.clone();
    if reference_offset(plan, reference) <= tol {
        if let Some(&orig) = assignment.original_speeds.get(&id) {
            out.speeds.insert(id, orig);
        }
    }
    out
}

/// True when every plan ends within `tol` of its reference's end and all
/// pairs of plans stay at least `d_min` apart at every sample.
pub fn check_consensus(
    plans: &[Trajectory],
    references: &[Trajectory],
    d_min: f64,
    tol: f64,
) -> bool {
    let on_reference = plans
        .iter()
        .zip(references)
        .all(|(p, r)| p.last().distance(r.last()) <= tol);
    if !on_reference {
        return false;
    }
    for (i, a) in plans.iter().enumerate() {
        for b in &plans[i + 1..] {
            if a.points()
                .iter()
                .zip(b.points())
                .any(|(p, q)| p.distance(*q) < d_min)
            {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(n: usize, eps1: f64, eps2: f64) -> DeadlockConfig {
        DeadlockConfig { n, eps1, eps2 }
    }

    fn line(y: f64, h: usize) -> Trajectory {
        Trajectory::new((0..h).map(|i| Position2::new(i as f64, y)).collect(), 0.1).unwrap()
    }

    #[test]
    fn constant_offset_is_deadlock() {
        let s = evaluate(&[2.0, 2.0], &cfg(2, 0.15, 2.0));
        assert!(s.is_deadlocked);
        assert_eq!(s.tail_spread, 0.0);
        assert_eq!(s.tail_mean_distance, 2.0);
    }

    #[test]
    fn converging_tail_is_not_deadlock() {
        let s = evaluate(&[1.0, 0.5, 0.1], &cfg(3, 0.01, 0.2));
        assert!(!s.is_deadlocked);
        assert!((s.tail_spread - 0.9).abs() < 1e-12);
    }

    #[test]
    fn small_offset_is_not_deadlock() {
        assert!(!evaluate(&[0.05; 5], &cfg(5, 0.01, 0.2)).is_deadlocked);
    }

    #[test]
    fn detect_uses_path_or_exit_point() {
        let path =
            ReferencePath::straight(Position2::new(-10.0, 0.0), Position2::new(100.0, 0.0), 10.0)
                .unwrap();
        let plan = line(2.0, 10);
        let s = detect(&plan, &path, &cfg(2, 0.15, 2.0), DistanceMode::PathDistance);
        assert!(s.is_deadlocked);
        let s = detect(
            &plan,
            &path,
            &cfg(2, 0.15, 2.0),
            DistanceMode::ExitPointDistance(Position2::new(50.0, 2.0)),
        );
        // distances 42 and 41: spread 1 > 0.15
        assert!(!s.is_deadlocked);
        assert!((s.tail_spread - 1.0).abs() < 1e-12);
    }

    #[test]
    fn left_vehicle_wins_symmetric_tie() {
        let d = Position2::new(1.0, 0.0);
        let c = [
            PriorityCandidate::along(1, Position2::new(5.0, -2.0), d, 6.0, Side::Right),
            PriorityCandidate::along(2, Position2::new(5.0, 2.0), d, 6.0, Side::Left),
        ];
        assert_eq!(assign_priorities(&c), vec![2, 1]);
    }

    #[test]
    fn front_then_mean_distance() {
        let d = Position2::new(1.0, 0.0);
        let c = [
            PriorityCandidate::along(1, Position2::new(0.0, 0.0), d, 1.0, Side::Left),
            PriorityCandidate::along(2, Position2::new(5.0, 0.0), d, 3.0, Side::Right),
        ];
        assert_eq!(assign_priorities(&c), vec![2, 1]);
        let c = [
            PriorityCandidate::along(1, Position2::new(0.0, 0.0), d, 2.0, Side::Left),
            PriorityCandidate::along(2, Position2::new(0.0, 1.0), d, 1.0, Side::Right),
        ];
        assert_eq!(assign_priorities(&c), vec![2, 1]);
    }

    #[test]
    fn resolve_examples() {
        let base: BTreeMap<usize, f64> = (1..=4).map(|i| (i, 10.0)).collect();
        let a = resolve(&[4, 3], &base, &[2.5, 2.0], "merging").unwrap();
        assert_eq!(a.speed(4), Some(25.0));
        assert_eq!(a.speed(3), Some(20.0));
        assert_eq!(a.speed(1), Some(10.0));
        assert_eq!(a.speed(2), Some(10.0));

        let base: BTreeMap<usize, f64> = [(1, 10.0), (2, 10.0)].into();
        let a = resolve(&[2, 1], &base, &[1.5, 1.0], "crossing").unwrap();
        assert_eq!(a.speed(2), Some(15.0));
        assert_eq!(a.speed(1), Some(10.0));

        let a = resolve(&[1], &base, &[1.0], "single").unwrap();
        assert_eq!(a.speeds, base);

        let err = resolve(&[1, 2], &base, &[1.0], "tiny").unwrap_err();
        assert!(err.to_string().contains("tiny"));
    }

    #[test]
    fn revert_examples() {
        let base: BTreeMap<usize, f64> = [(1, 10.0), (2, 10.0)].into();
        let boosted = resolve(&[1], &base, &[2.0], "t").unwrap();
        let r = line(0.0, 5);
        let back = maybe_revert(&boosted, 1, &r, &r, 0.1);
        assert_eq!(back.speed(1), Some(10.0));
        let off = line(0.5, 5);
        assert_eq!(maybe_revert(&boosted, 1, &off, &r, 0.1), boosted);
    }

    #[test]
    fn consensus_examples() {
        let refs = [line(0.0, 5), line(20.0, 5)];
        assert!(check_consensus(&refs, &refs, 3.0, 0.1));
        let plans = [line(2.0, 5), line(20.0, 5)];
        assert!(!check_consensus(&plans, &refs, 3.0, 0.5));
        let close = [line(0.0, 5), line(1.0, 5)];
        assert!(!check_consensus(&close, &close, 3.0, 0.1));
    }

    proptest! {
        #[test]
        fn detect_scales_linearly(d in proptest::collection::vec(0.0..10.0f64, 1..8), k in 0.1..10.0f64) {
            let c = cfg(d.len(), 0.5, 1.0);
            let a = evaluate(&d, &c);
            let scaled: Vec<f64> = d.iter().map(|v| v * k).collect();
            let b = evaluate(&scaled, &c);
            prop_assert!((b.tail_spread - k * a.tail_spread).abs() < 1e-9);
            prop_assert!((b.tail_mean_distance - k * a.tail_mean_distance).abs() < 1e-9);
            let max = d.iter().cloned().fold(f64::MIN, f64::max);
            let min = d.iter().cloned().fold(f64::MAX, f64::min);
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            prop_assert_eq!(a.is_deadlocked, (max - min).abs() <= 0.5 && mean.abs() >= 1.0);
        }

        #[test]
        fn priorities_are_an_order_independent_permutation(
            raw in proptest::collection::vec((0.0..20.0f64, 0.0..5.0f64, 0..3u8), 2..7),
            rot in 0usize..7,
        ) {
            let c: Vec<PriorityCandidate> = raw.iter().enumerate().map(|(i, &(p, m, s))| PriorityCandidate {
                id: i,
                progress: p,
                tail_mean_distance: m,
                side: [Side::Left, Side::Right, Side::OnPath][s as usize],
            }).collect();
            let order = assign_priorities(&c);
            let mut ids = order.clone();
            ids.sort();
            prop_assert_eq!(ids, (0..c.len()).collect::<Vec<_>>());
            let mut shuffled = c.clone();
            shuffled.rotate_left(rot % c.len());
            shuffled.reverse();
            prop_assert_eq!(assign_priorities(&shuffled), order);
        }

        #[test]
        fn distinct_ladder_gives_distinct_speeds(n in 1usize..5) {
            let base: BTreeMap<usize, f64> = (0..n).map(|i| (i, 10.0)).collect();
            let ids: Vec<usize> = (0..n).collect();
            let a = resolve(&ids, &base, &DEFAULT_LADDER, "p").unwrap();
            let mut speeds: Vec<f64> = ids.iter().map(|i| a.speeds[i]).collect();
            speeds.dedup();
            prop_assert_eq!(speeds.len(), n);
        }

        #[test]
        fn revert_is_idempotent(offset in 0.0..0.3f64) {
            let base: BTreeMap<usize, f64> = [(0, 10.0)].into();
            let a = resolve(&[0], &base, &[2.0], "p").unwrap();
            let r = line(0.0, 5);
            let p = line(offset, 5);
            let once = maybe_revert(&a, 0, &p, &r, 0.1);
            prop_assert_eq!(maybe_revert(&once, 0, &p, &r, 0.1), once.clone());
        }
    }
}
