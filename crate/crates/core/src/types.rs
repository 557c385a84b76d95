//! Shared domain types.
//!
//! Everything here is an immutable value type. Constructors validate their
//! inputs and return [`Error::InvalidValue`] for anything that breaks an
//! invariant; bulk checks that should report rather than fail (trajectory
//! length, per-step displacement) live in `violations`-style methods.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default sanity bound on speed implied by consecutive trajectory points.
pub const DEFAULT_V_MAX: f64 = 60.0;

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(angle: f64) -> f64 {
    let wrapped = angle.rem_euclid(2.0 * PI);
    if wrapped > PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// A point in the plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Position2 {
    pub x: f64,
    pub y: f64,
}

impl Position2 {
    pub const ZERO: Position2 = Position2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Position2 { x, y }
    }

    pub fn from_polar(radius: f64, angle: f64) -> Self {
        Position2::new(radius * angle.cos(), radius * angle.sin())
    }

    pub fn dot(self, other: Position2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, other: Position2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Position2) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Rotates counter-clockwise by `angle` radians about the origin.
    pub fn rotate(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Position2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Heading of this vector, or `None` when it is shorter than `eps`.
    pub fn heading(self, eps: f64) -> Option<f64> {
        (self.norm() >= eps).then(|| self.y.atan2(self.x))
    }
}

impl From<[f64; 2]> for Position2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Position2 { x, y }
    }
}

impl From<Position2> for [f64; 2] {
    fn from(p: Position2) -> Self {
        [p.x, p.y]
    }
}

impl Add for Position2 {
    type Output = Position2;
    fn add(self, rhs: Position2) -> Position2 {
        Position2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Position2 {
    fn add_assign(&mut self, rhs: Position2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Position2 {
    type Output = Position2;
    fn sub(self, rhs: Position2) -> Position2 {
        Position2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Position2 {
    type Output = Position2;
    fn mul(self, k: f64) -> Position2 {
        Position2::new(self.x * k, self.y * k)
    }
}

impl Neg for Position2 {
    type Output = Position2;
    fn neg(self) -> Position2 {
        Position2::new(-self.x, -self.y)
    }
}

impl fmt::Display for Position2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Planned waypoints sampled every `sample_dt` seconds.
///
/// Point 0 is the plan's start (the vehicle's current position up to the
/// slack), point `h` is `h * sample_dt` seconds later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    points: Vec<Position2>,
    sample_dt: f64,
}

impl Trajectory {
    pub fn new(points: Vec<Position2>, sample_dt: f64) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid(
                "trajectory",
                format!("needs at least 2 points, got {}", points.len()),
            ));
        }
        if !(sample_dt > 0.0 && sample_dt.is_finite()) {
            return Err(Error::invalid(
                "trajectory",
                format!("sample interval must be positive, got {sample_dt}"),
            ));
        }
        if let Some(h) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::invalid(
                "trajectory",
                format!("point {h} is not finite"),
            ));
        }
        Ok(Trajectory { points, sample_dt })
    }

    /// `count` copies of `point`.
    pub fn stationary(point: Position2, count: usize, sample_dt: f64) -> Result<Self> {
        Trajectory::new(vec![point; count], sample_dt)
    }

    /// Builds from an interleaved `[x1, y1, x2, y2, ...]` slice.
    pub fn from_flat(flat: &[f64], sample_dt: f64) -> Result<Self> {
        if !flat.len().is_multiple_of(2) {
            return Err(Error::invalid("trajectory", "odd-length flat vector"));
        }
        let points = flat
            .chunks_exact(2)
            .map(|c| Position2::new(c[0], c[1]))
            .collect();
        Trajectory::new(points, sample_dt)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    pub fn points(&self) -> &[Position2] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn sample_dt(&self) -> f64 {
        self.sample_dt
    }

    pub fn first(&self) -> Position2 {
        self.points[0]
    }

    pub fn last(&self) -> Position2 {
        self.points[self.points.len() - 1]
    }

    /// The last `n` points (all of them when `n` exceeds the length).
    pub fn tail(&self, n: usize) -> &[Position2] {
        &self.points[self.points.len().saturating_sub(n)..]
    }

    /// Direction of travel at sample `h`, from the segment starting there
    /// (the final segment is reused for the last sample). `None` when that
    /// segment is shorter than `eps`.
    pub fn segment_heading(&self, h: usize, eps: f64) -> Option<f64> {
        let i = h.min(self.points.len() - 2);
        (self.points[i + 1] - self.points[i]).heading(eps)
    }

    /// Largest pointwise distance to `other` over the common prefix.
    pub fn max_deviation(&self, other: &Trajectory) -> f64 {
        self.points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| a.distance(*b))
            .fold(0.0, f64::max)
    }

    /// Total polyline length.
    pub fn path_length(&self) -> f64 {
        self.points.windows(2).map(|w| w[0].distance(w[1])).sum()
    }

    /// Position at `dt` seconds after the first sample, linearly
    /// interpolated; held at the final point beyond the horizon.
    pub fn sample_at(&self, dt: f64) -> Position2 {
        let u = (dt / self.sample_dt).max(0.0);
        let i = u.floor() as usize;
        if i + 1 >= self.points.len() {
            return self.last();
        }
        let frac = u - i as f64;
        self.points[i] + (self.points[i + 1] - self.points[i]) * frac
    }

    /// Invariant violations against a configured horizon and speed bound.
    pub fn violations(&self, horizon: usize, v_max: f64) -> Vec<String> {
        let mut out = Vec::new();
        if self.points.len() != horizon {
            out.push(format!(
                "trajectory has {} points, horizon is {horizon}",
                self.points.len()
            ));
        }
        let bound = v_max * self.sample_dt;
        for (h, w) in self.points.windows(2).enumerate() {
            let step = w[0].distance(w[1]);
            if step > bound {
                out.push(format!(
                    "step {h}->{} moves {step:.3} m, bound is {bound:.3} m",
                    h + 1
                ));
            }
        }
        out
    }
}

/// Plant state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: Position2,
    pub speed: f64,
    pub heading: f64,
}

impl VehicleState {
    /// Heading is normalized into `(-pi, pi]`.
    pub fn new(position: Position2, speed: f64, heading: f64) -> Result<Self> {
        if !position.is_finite() || !speed.is_finite() || !heading.is_finite() {
            return Err(Error::invalid("vehicle state", "non-finite component"));
        }
        if speed < 0.0 {
            return Err(Error::invalid(
                "vehicle state",
                format!("speed must be non-negative, got {speed}"),
            ));
        }
        Ok(VehicleState {
            position,
            speed,
            heading: normalize_angle(heading),
        })
    }
}

/// Collision geometry: the ego vehicle is a circle of radius `r`, every
/// other vehicle a `2l x 2w` rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleGeometry {
    pub r: f64,
    pub l: f64,
    pub w: f64,
}

impl VehicleGeometry {
    pub fn new(r: f64, l: f64, w: f64) -> Result<Self> {
        for (name, v) in [("r", r), ("l", l), ("w", w)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(
                    "vehicle geometry",
                    format!("{name} must be positive, got {v}"),
                ));
            }
        }
        Ok(VehicleGeometry { r, l, w })
    }
}

impl Default for VehicleGeometry {
    fn default() -> Self {
        VehicleGeometry {
            r: 3.0,
            l: 1.9,
            w: 1.0,
        }
    }
}

/// Weights of the tracking, acceleration and slack cost terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerWeights {
    pub c_o: f64,
    pub c_a: f64,
    pub c_s: f64,
}

impl PlannerWeights {
    pub fn new(c_o: f64, c_a: f64, c_s: f64) -> Result<Self> {
        for (name, v) in [("c_o", c_o), ("c_a", c_a), ("c_s", c_s)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(
                    "planner weights",
                    format!("{name} must be positive, got {v}"),
                ));
            }
        }
        Ok(PlannerWeights { c_o, c_a, c_s })
    }
}

impl Default for PlannerWeights {
    fn default() -> Self {
        PlannerWeights {
            c_o: 1.0,
            c_a: 1.0,
            c_s: 1000.0,
        }
    }
}

/// Projection of a point onto a [`ReferencePath`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathProjection {
    /// Arc length of the closest point, measured from the path start.
    pub arc_length: f64,
    pub point: Position2,
    /// Unit direction of the segment holding the closest point.
    pub direction: Position2,
    pub distance: f64,
}

/// Piecewise-linear lane centerline with the vehicle's base desired speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePath {
    polyline: Vec<Position2>,
    desired_speed: f64,
}

impl ReferencePath {
    pub fn new(polyline: Vec<Position2>, desired_speed: f64) -> Result<Self> {
        if polyline.len() < 2 {
            return Err(Error::invalid(
                "reference path",
                format!("needs at least 2 points, got {}", polyline.len()),
            ));
        }
        if polyline.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("reference path", "non-finite point"));
        }
        if let Some(i) = polyline.windows(2).position(|w| w[0] == w[1]) {
            return Err(Error::invalid(
                "reference path",
                format!("points {i} and {} coincide", i + 1),
            ));
        }
        if !(desired_speed > 0.0 && desired_speed.is_finite()) {
            return Err(Error::invalid(
                "reference path",
                format!("desired speed must be positive, got {desired_speed}"),
            ));
        }
        Ok(ReferencePath {
            polyline,
            desired_speed,
        })
    }

    /// Straight path from `start` to `end`.
    pub fn straight(start: Position2, end: Position2, desired_speed: f64) -> Result<Self> {
        ReferencePath::new(vec![start, end], desired_speed)
    }

    pub fn polyline(&self) -> &[Position2] {
        &self.polyline
    }

    pub fn desired_speed(&self) -> f64 {
        self.desired_speed
    }

    pub fn start(&self) -> Position2 {
        self.polyline[0]
    }

    pub fn end(&self) -> Position2 {
        self.polyline[self.polyline.len() - 1]
    }

    pub fn length(&self) -> f64 {
        self.polyline.windows(2).map(|w| w[0].distance(w[1])).sum()
    }

    /// Closest point on the polyline. Ties go to the earliest segment.
    pub fn project(&self, point: Position2) -> PathProjection {
        let mut best: Option<PathProjection> = None;
        let mut start_arc = 0.0;
        for w in self.polyline.windows(2) {
            let seg = w[1] - w[0];
            let len = seg.norm();
            let dir = seg * (1.0 / len);
            let t = ((point - w[0]).dot(dir)).clamp(0.0, len);
            let closest = w[0] + dir * t;
            let distance = point.distance(closest);
            if best.is_none_or(|b| distance < b.distance) {
                best = Some(PathProjection {
                    arc_length: start_arc + t,
                    point: closest,
                    direction: dir,
                    distance,
                });
            }
            start_arc += len;
        }
        best.expect("polyline has at least one segment")
    }

    /// Point at arc length `s`, clamped to the polyline ends.
    pub fn point_at(&self, s: f64) -> Position2 {
        if s <= 0.0 {
            return self.start();
        }
        let mut remaining = s;
        for w in self.polyline.windows(2) {
            let len = w[0].distance(w[1]);
            if remaining <= len {
                return w[0] + (w[1] - w[0]) * (remaining / len);
            }
            remaining -= len;
        }
        self.end()
    }

    /// Which side of the path `point` lies on, seen along the path direction.
    pub fn side_of(&self, point: Position2, eps: f64) -> Side {
        let proj = self.project(point);
        let c = proj.direction.cross(point - proj.point);
        if c > eps {
            Side::Left
        } else if c < -eps {
            Side::Right
        } else {
            Side::OnPath
        }
    }

    pub fn with_speed(&self, desired_speed: f64) -> Result<Self> {
        ReferencePath::new(self.polyline.clone(), desired_speed)
    }
}

/// Lateral side relative to a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
    OnPath,
}

/// Deadlock criterion parameters: tail length and the spread/mean thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeadlockConfig {
    pub n: usize,
    pub eps1: f64,
    pub eps2: f64,
}

impl DeadlockConfig {
    pub fn new(n: usize, eps1: f64, eps2: f64, horizon: usize) -> Result<Self> {
        let cfg = DeadlockConfig { n, eps1, eps2 };
        match cfg.violations(horizon).into_iter().next() {
            Some(v) => Err(Error::invalid("deadlock config", v)),
            None => Ok(cfg),
        }
    }

    pub fn violations(&self, horizon: usize) -> Vec<String> {
        let mut out = Vec::new();
        if self.n == 0 || self.n > horizon {
            out.push(format!(
                "deadlock tail length n={} must lie in 1..={horizon}",
                self.n
            ));
        }
        if !(self.eps1 > 0.0) {
            out.push(format!("eps1 must be positive, got {}", self.eps1));
        }
        if !(self.eps2 > 0.0) {
            out.push(format!("eps2 must be positive, got {}", self.eps2));
        }
        out
    }
}

/// Broadcast plan sent by one vehicle at the end of a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct V2VMessage {
    pub sender_id: usize,
    pub round: u64,
    pub trajectory: Trajectory,
    pub heading: f64,
}
