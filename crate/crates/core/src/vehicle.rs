//! Bicycle-kinematics plant and the low-level tracking controller.
//!
//! The plant uses curvature `kappa = tan(delta) / L_r`, where `L_r` is the
//! distance travelled during the step, so the heading changes by exactly
//! `tan(delta)` per step whenever the vehicle moves. The wheelbase is kept in
//! [`PlantParams`] for configuration but does not enter this update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::MIN_SEGMENT_FOR_HEADING;
use crate::types::{normalize_angle, Position2, Trajectory, VehicleState};

pub const MAX_ACCEL: f64 = 5.0;
pub const MAX_STEER: f64 = std::f64::consts::FRAC_PI_4;

/// Below this `|kappa * L_r|` the straight-line update is used.
const STRAIGHT_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    accel: f64,
    steer: f64,
}

impl ControlInput {
    /// Clamps both inputs into their bounds. NaN maps to zero.
    pub fn new(accel: f64, steer: f64) -> Self {
        let clean = |v: f64, m: f64| if v.is_nan() { 0.0 } else { v.clamp(-m, m) };
        ControlInput {
            accel: clean(accel, MAX_ACCEL),
            steer: clean(steer, MAX_STEER),
        }
    }

    pub fn accel(&self) -> f64 {
        self.accel
    }

    pub fn steer(&self) -> f64 {
        self.steer
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    pub wheelbase: f64,
}

impl PlantParams {
    pub fn new(wheelbase: f64) -> Result<Self> {
        if !(wheelbase > 0.0 && wheelbase.is_finite()) {
            return Err(Error::invalid(
                "wheelbase",
                format!("must be positive, got {wheelbase}"),
            ));
        }
        Ok(PlantParams { wheelbase })
    }
}

impl Default for PlantParams {
    fn default() -> Self {
        PlantParams { wheelbase: 2.8 }
    }
}

/// Distance travelled and final speed over one step, with the speed floored
/// at zero (a vehicle braking to a stop stays stopped).
fn step_length(v0: f64, a: f64, dt: f64) -> (f64, f64) {
    let v1 = v0 + a * dt;
    if v1 >= 0.0 {
        (v0 * dt + 0.5 * a * dt * dt, v1)
    } else {
        (v0 * v0 / (2.0 * a.abs()), 0.0)
    }
}

/// Advances the plant by `dt` with the input held constant.
///
/// # Panics
/// Panics if `dt` is not positive.
pub fn kinematic_step(
    state: &VehicleState,
    input: ControlInput,
    _params: &PlantParams,
    dt: f64,
) -> VehicleState {
    assert!(dt > 0.0, "kinematic_step: dt must be positive, got {dt}");
    let (length, speed) = step_length(state.speed, input.accel, dt);
    let theta0 = state.heading;
    if length <= 0.0 {
        return VehicleState { speed, ..*state };
    }
    let kappa = input.steer.tan() / length;
    let turn = kappa * length;
    let (dx, dy) = if turn.abs() < STRAIGHT_THRESHOLD {
        (length * theta0.cos(), length * theta0.sin())
    } else {
        (
            ((theta0 + turn).sin() - theta0.sin()) / kappa,
            (theta0.cos() - (theta0 + turn).cos()) / kappa,
        )
    };
    VehicleState {
        position: state.position + Position2::new(dx, dy),
        speed,
        heading: normalize_angle(theta0 + turn),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    pub k_v: f64,
    pub k_h: f64,
    pub k_c: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        ControllerGains {
            k_v: 2.0,
            k_h: 1.5,
            k_c: 0.8,
        }
    }
}

/// Signed lateral offset of `point` from the line through `segment`, positive
/// when the point lies to the left of the travel direction.
pub fn cross_track_error(point: Position2, a: Position2, b: Position2) -> f64 {
    let d = b - a;
    let len = d.norm();
    if len < MIN_SEGMENT_FOR_HEADING {
        return 0.0;
    }
    d.cross(point - a) / len
}

/// Distance from `point` to the polyline of `plan`.
pub fn distance_to_polyline(point: Position2, plan: &Trajectory) -> f64 {
    if plan.len() == 1 {
        return point.distance(plan.points()[0]);
    }
    plan.points()
        .windows(2)
        .map(|w| {
            let d = w[1] - w[0];
            let len2 = d.dot(d);
            let t = if len2 > 0.0 {
                ((point - w[0]).dot(d) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            point.distance(w[0] + d * t)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Computes the input to hold for one replanning interval.
///
/// Heading and cross-track errors are taken against the first plan segment
/// long enough to define a direction. A plan whose points all coincide
/// yields full braking and zero steer.
pub fn tracking_control(
    state: &VehicleState,
    plan: &Trajectory,
    desired_speed: f64,
    gains: &ControllerGains,
) -> ControlInput {
    let points = plan.points();
    let Some(seg) = (0..points.len().saturating_sub(1))
        .find(|&h| plan.segment_heading(h, MIN_SEGMENT_FOR_HEADING).is_some())
    else {
        return ControlInput::new(-MAX_ACCEL, 0.0);
    };
    let heading = plan
        .segment_heading(seg, MIN_SEGMENT_FOR_HEADING)
        .unwrap_or(state.heading);
    let implied = points[1].distance(points[0]) / plan.sample_dt();
    let v_target = implied.min(desired_speed.max(0.0));
    let accel = gains.k_v * (v_target - state.speed);

    // plan left of the vehicle means steer left
    let cte = -cross_track_error(state.position, points[seg], points[seg + 1]);
    let heading_error = normalize_angle(heading - state.heading);
    ControlInput::new(accel, gains.k_h * heading_error + gains.k_c * cte)
}
