//! Quadratic objective over a single vehicle's stacked variable
//! `[x_1; ...; x_H; s]`, and reference trajectory generation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::types::{PlannerWeights, Position2, ReferencePath, Trajectory};

/// Second-difference operator mapping `2H` stacked coordinates to the
/// `2(H-2)` accelerations at the interior samples. Empty when `H < 3`.
pub fn build_acceleration_operator(horizon: usize, sample_dt: f64) -> DMatrix<f64> {
    let rows = 2 * horizon.saturating_sub(2);
    let mut a = DMatrix::zeros(rows, 2 * horizon);
    let k = 1.0 / (sample_dt * sample_dt);
    for h in 1..horizon.saturating_sub(1) {
        for axis in 0..2 {
            let r = 2 * (h - 1) + axis;
            a[(r, 2 * (h - 1) + axis)] = k;
            a[(r, 2 * h + axis)] = -2.0 * k;
            a[(r, 2 * (h + 1) + axis)] = k;
        }
    }
    a
}

/// Cost `1/2 z'Qz + q'z` over `z = [x; s]` (dimension `2H + 2`), with the
/// constant `1/2 c_o |x_ref|^2` dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveForm {
    pub cost: DMatrix<f64>,
    pub linear: DVector<f64>,
}

impl ObjectiveForm {
    pub fn new(reference: &Trajectory, weights: &PlannerWeights) -> Self {
        let cost = quadratic_cost(reference.len(), reference.sample_dt(), weights);
        Self::with_cost(cost, reference, weights)
    }

    /// Reuses a `cost` from [`quadratic_cost`] built for the same horizon,
    /// sampling time and weights.
    pub fn with_cost(cost: DMatrix<f64>, reference: &Trajectory, weights: &PlannerWeights) -> Self {
        let mut linear = DVector::zeros(cost.nrows());
        for (i, v) in reference.to_flat().into_iter().enumerate() {
            linear[i] = -weights.c_o * v;
        }
        ObjectiveForm { cost, linear }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn value(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.cost * z)) + self.linear.dot(z)
    }
}

/// The reference-independent matrix `Q` of [`ObjectiveForm`].
pub fn quadratic_cost(horizon: usize, sample_dt: f64, weights: &PlannerWeights) -> DMatrix<f64> {
    let h = horizon;
    let n = 2 * h + 2;
    let acc = build_acceleration_operator(h, sample_dt);
    let mut cost = DMatrix::zeros(n, n);
    let xx = acc.transpose() * &acc * weights.c_a
        + DMatrix::from_diagonal_element(2 * h, 2 * h, weights.c_o);
    cost.view_mut((0, 0), (2 * h, 2 * h)).copy_from(&xx);
    cost[(2 * h, 2 * h)] = 2.0 * weights.c_s;
    cost[(2 * h + 1, 2 * h + 1)] = 2.0 * weights.c_s;
    cost
}

/// Stacks a trajectory and slack into `[x; s]`.
pub fn stack(trajectory: &Trajectory, slack: Position2) -> DVector<f64> {
    let mut flat = trajectory.to_flat();
    flat.extend([slack.x, slack.y]);
    DVector::from_vec(flat)
}

/// `J` for one vehicle, evaluated term by term.
pub fn vehicle_cost(
    trajectory: &Trajectory,
    slack: Position2,
    reference: &Trajectory,
    weights: &PlannerWeights,
) -> Result<f64> {
    if trajectory.len() != reference.len() {
        return Err(Error::Dimension {
            context: "trajectory vs reference",
            expected: reference.len(),
            actual: trajectory.len(),
        });
    }
    let x = DVector::from_vec(trajectory.to_flat());
    let x_ref = DVector::from_vec(reference.to_flat());
    let acc = build_acceleration_operator(trajectory.len(), trajectory.sample_dt()) * &x;
    Ok(0.5 * weights.c_o * x.dot(&x) - weights.c_o * x.dot(&x_ref)
        + 0.5 * weights.c_a * acc.norm_squared()
        + weights.c_s * slack.dot(slack))
}

/// Sum of [`vehicle_cost`] over all vehicles.
pub fn total_cost(
    trajectories: &[Trajectory],
    slacks: &[Position2],
    references: &[Trajectory],
    weights: &PlannerWeights,
) -> Result<f64> {
    if trajectories.len() != slacks.len() || trajectories.len() != references.len() {
        return Err(Error::Dimension {
            context: "total cost inputs",
            expected: trajectories.len(),
            actual: slacks.len().min(references.len()),
        });
    }
    trajectories
        .iter()
        .zip(slacks)
        .zip(references)
        .map(|((t, s), r)| vehicle_cost(t, *s, r, weights))
        .sum()
}

/// Reference trajectory: sample `h` (0-based) sits `h * speed * dt` meters
/// of arc length ahead of the projection of `current` onto the path,
/// clamped at the path end. Sample 0 is the projection itself, matching the
/// plan's first waypoint which is tied to the current position.
pub fn build_reference(
    path: &ReferencePath,
    current: Position2,
    speed: f64,
    horizon: usize,
    sample_dt: f64,
) -> Result<Trajectory> {
    if !(speed >= 0.0 && speed.is_finite()) {
        return Err(Error::invalid(
            "reference speed",
            format!("must be non-negative, got {speed}"),
        ));
    }
    let start = path.project(current).arc_length;
    let points = (0..horizon)
        .map(|h| path.point_at(start + h as f64 * speed * sample_dt))
        .collect();
    Trajectory::new(points, sample_dt)
}
