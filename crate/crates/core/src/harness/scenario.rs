//! Scenario description, validation and the built-in scenarios.
//!
//! Scenarios are plain TOML. See `docs/scenario-format.md` for the schema;
//! [`ScenarioSpec::to_toml`] on any built-in scenario gives a complete
//! example.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::deadlock::DEFAULT_REVERT_TOL;
use crate::error::{Error, Result};
use crate::planner::LaneLock;
use crate::types::{
    DeadlockConfig, PlannerWeights, Position2, ReferencePath, VehicleGeometry, VehicleState,
};
use crate::vehicle::{ControllerGains, PlantParams};

pub const BUILTIN_SCENARIOS: [&str; 6] = [
    "unstructured_road",
    "intersection",
    "crossing",
    "platoon",
    "merging",
    "overtaking",
];

/// Vehicles within this distance of their path end count as arrived.
pub const GOAL_TOLERANCE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Road {
    Highway {
        lanes: usize,
        lane_width: f64,
    },
    Intersection {
        center: Position2,
        /// Side length of the square conflict area.
        area: f64,
    },
    Unstructured,
}

impl Road {
    /// Three lanes, 4 m wide, centerlines at y = 4, 0, -4 (lanes 0, 1, 2).
    pub fn highway() -> Self {
        Road::Highway {
            lanes: 3,
            lane_width: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    /// The vehicle lands exactly on the next plan point every round.
    DirectPlacement,
    /// A tracking controller drives a bicycle plant toward the plan.
    TrackedControl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceModeKind {
    Path,
    ExitPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeadlockSettings {
    #[serde(default = "yes")]
    pub enabled: bool,
    pub n: usize,
    pub eps1: f64,
    pub eps2: f64,
    #[serde(default = "default_ladder")]
    pub ladder: Vec<f64>,
    #[serde(default = "default_mode")]
    pub mode: DistanceModeKind,
    #[serde(default = "default_revert_tol")]
    pub revert_tol: f64,
}

fn yes() -> bool {
    true
}

fn default_ladder() -> Vec<f64> {
    crate::deadlock::DEFAULT_LADDER.to_vec()
}

fn default_mode() -> DistanceModeKind {
    DistanceModeKind::Path
}

fn default_revert_tol() -> f64 {
    DEFAULT_REVERT_TOL
}

impl DeadlockSettings {
    pub fn new(n: usize, eps1: f64, eps2: f64) -> Self {
        DeadlockSettings {
            enabled: true,
            n,
            eps1,
            eps2,
            ladder: default_ladder(),
            mode: DistanceModeKind::Path,
            revert_tol: DEFAULT_REVERT_TOL,
        }
    }

    pub fn config(&self) -> DeadlockConfig {
        DeadlockConfig {
            n: self.n,
            eps1: self.eps1,
            eps2: self.eps2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleSpec {
    pub id: usize,
    pub position: Position2,
    pub speed: f64,
    /// Radians from the x axis.
    pub heading: f64,
    /// Reference path polyline; its centerline is the target lane.
    pub path: Vec<Position2>,
    pub desired_speed: f64,
    #[serde(default)]
    pub geometry: VehicleGeometry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lane_lock: Option<LaneLock>,
    /// Point used by the `exit_point` deadlock distance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_point: Option<Position2>,
}

impl VehicleSpec {
    pub fn reference_path(&self) -> Result<ReferencePath> {
        ReferencePath::new(self.path.clone(), self.desired_speed)
    }

    pub fn initial_state(&self) -> Result<VehicleState> {
        VehicleState::new(self.position, self.speed, self.heading)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub road: Road,
    pub control_mode: ControlMode,
    /// Planning horizon H (number of waypoints).
    pub horizon: usize,
    /// Waypoint spacing T_s in seconds.
    pub sample_dt: f64,
    /// Replanning period T_r in seconds; one round per replan.
    pub replan_dt: f64,
    pub total_rounds: usize,
    #[serde(default)]
    pub seed: u64,
    /// Uniform jitter (meters) added to each initial position, drawn from
    /// `seed`. Zero disables it.
    #[serde(default)]
    pub initial_jitter: f64,
    #[serde(default)]
    pub weights: PlannerWeights,
    pub deadlock: DeadlockSettings,
    #[serde(default)]
    pub controller: ControllerGains,
    #[serde(default)]
    pub plant: PlantParams,
    pub vehicles: Vec<VehicleSpec>,
}

impl ScenarioSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Built-in name or path to a TOML file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if BUILTIN_SCENARIOS.contains(&name_or_path) {
            return builtin_scenario(name_or_path);
        }
        let path = Path::new(name_or_path);
        if path.exists() {
            return Self::load(path);
        }
        Err(Error::UnknownScenario {
            name: name_or_path.to_string(),
            valid: BUILTIN_SCENARIOS.to_vec(),
        })
    }

    /// Smallest safety radius among the vehicles; used for audits.
    pub fn safety_margin(&self) -> f64 {
        self.vehicles
            .iter()
            .map(|v| v.geometry.r)
            .fold(f64::INFINITY, f64::min)
    }

    /// Center distance kept by the centralized planner: the smallest
    /// `r + w`, so the circle fits inside every distributed keep-out region.
    pub fn centralized_margin(&self) -> f64 {
        self.vehicles
            .iter()
            .map(|v| v.geometry.r + v.geometry.w)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Lists every problem with `spec`; empty when it can be run.
pub fn validate_scenario(spec: &ScenarioSpec) -> Vec<String> {
    let mut out = Vec::new();
    let positive = |v: f64| v > 0.0 && v.is_finite();
    if spec.vehicles.is_empty() {
        out.push("at least one vehicle is required".into());
    }
    if spec.horizon < 3 {
        out.push(format!("horizon must be at least 3, got {}", spec.horizon));
    }
    if !positive(spec.sample_dt) {
        out.push(format!(
            "sample_dt must be positive, got {}",
            spec.sample_dt
        ));
    }
    if !positive(spec.replan_dt) {
        out.push(format!(
            "replan_dt must be positive, got {}",
            spec.replan_dt
        ));
    }
    match spec.control_mode {
        ControlMode::TrackedControl if spec.replan_dt > spec.sample_dt * (1.0 + 1e-12) => {
            out.push(format!(
                "tracked control needs replan_dt <= sample_dt, got {} > {}",
                spec.replan_dt, spec.sample_dt
            ))
        }
        ControlMode::DirectPlacement
            if (spec.replan_dt - spec.sample_dt).abs() > 1e-12 * spec.sample_dt.abs() =>
        {
            out.push(format!(
                "direct placement needs replan_dt == sample_dt, got {} and {}",
                spec.replan_dt, spec.sample_dt
            ))
        }
        _ => {}
    }
    if spec.total_rounds == 0 {
        out.push("total_rounds must be positive".into());
    }
    if !(spec.initial_jitter >= 0.0 && spec.initial_jitter.is_finite()) {
        out.push(format!(
            "initial_jitter must be non-negative, got {}",
            spec.initial_jitter
        ));
    }
    let w = &spec.weights;
    if !(positive(w.c_o) && w.c_a >= 0.0 && positive(w.c_s)) {
        out.push("weights need c_o > 0, c_a >= 0, c_s > 0".into());
    }
    if let Road::Highway { lanes, lane_width } = spec.road {
        if lanes == 0 || !positive(lane_width) {
            out.push("highway needs at least one lane of positive width".into());
        }
    }

    let d = &spec.deadlock;
    out.extend(
        d.config()
            .violations(spec.horizon)
            .into_iter()
            .map(|m| format!("deadlock: {m}")),
    );
    if d.ladder.is_empty() || d.ladder.iter().any(|&m| !positive(m)) {
        out.push("deadlock ladder must be non-empty with positive multipliers".into());
    }
    if !(d.revert_tol >= 0.0) {
        out.push("deadlock revert_tol must be non-negative".into());
    }
    let g = &spec.controller;
    if ![g.k_v, g.k_h, g.k_c]
        .iter()
        .all(|k| *k >= 0.0 && k.is_finite())
    {
        out.push("controller gains must be non-negative".into());
    }
    if !positive(spec.plant.wheelbase) {
        out.push("plant wheelbase must be positive".into());
    }

    let mut ids = BTreeSet::new();
    for v in &spec.vehicles {
        let tag = format!("vehicle {}", v.id);
        if !ids.insert(v.id) {
            out.push(format!("{tag}: duplicate id"));
        }
        if let Err(e) = v.initial_state() {
            out.push(format!("{tag}: {e}"));
        }
        if let Err(e) = v.reference_path() {
            out.push(format!("{tag}: {e}"));
        }
        if let Err(e) = VehicleGeometry::new(v.geometry.r, v.geometry.l, v.geometry.w) {
            out.push(format!("{tag}: {e}"));
        }
        if let Some(lock) = v.lane_lock {
            if (lock.normal.norm() - 1.0).abs() > 1e-9 || !lock.offset.is_finite() {
                out.push(format!("{tag}: lane_lock normal must be a unit vector"));
            }
        }
        if d.mode == DistanceModeKind::ExitPoint && v.exit_point.is_none() {
            out.push(format!(
                "{tag}: exit_point is required by the exit_point deadlock mode"
            ));
        }
    }
    out
}

pub fn validate(spec: &ScenarioSpec) -> Result<()> {
    let problems = validate_scenario(spec);
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(problems))
    }
}

pub fn builtin_scenario(name: &str) -> Result<ScenarioSpec> {
    match name {
        "unstructured_road" => Ok(unstructured_road()),
        "intersection" => Ok(intersection()),
        "crossing" => Ok(crossing()),
        "platoon" => Ok(platoon()),
        "merging" => Ok(merging()),
        "overtaking" => Ok(overtaking()),
        _ => Err(Error::UnknownScenario {
            name: name.to_string(),
            valid: BUILTIN_SCENARIOS.to_vec(),
        }),
    }
}

/// All highway paths run from `HIGHWAY_ORIGIN` to `HIGHWAY_END` along x.
const HIGHWAY_ORIGIN: f64 = -100.0;
const HIGHWAY_END: f64 = 5000.0;

/// Highway vehicle heading +x whose target lane has centerline `lane_y`.
fn highway_vehicle(id: usize, x: f64, y: f64, speed: f64, lane_y: f64) -> VehicleSpec {
    VehicleSpec {
        id,
        position: Position2::new(x, y),
        speed,
        heading: 0.0,
        path: vec![
            Position2::new(HIGHWAY_ORIGIN, lane_y),
            Position2::new(HIGHWAY_END, lane_y),
        ],
        desired_speed: speed,
        geometry: VehicleGeometry::default(),
        lane_lock: None,
        exit_point: None,
    }
}

/// Weights shared by the built-in scenarios. The acceleration weight is
/// well below the library default: with `c_a = 1` the plans smooth over
/// about a second, their tails overshoot, and the flat-tail deadlock test
/// at the configured thresholds never fires.
pub fn scenario_weights() -> PlannerWeights {
    PlannerWeights::new(1.0, 0.001, 1000.0).expect("positive weights")
}

fn highway(
    name: &str,
    horizon: usize,
    rounds: usize,
    deadlock: DeadlockSettings,
    vehicles: Vec<VehicleSpec>,
) -> ScenarioSpec {
    ScenarioSpec {
        name: name.to_string(),
        road: Road::highway(),
        control_mode: ControlMode::TrackedControl,
        horizon,
        sample_dt: 0.1,
        replan_dt: 0.02,
        total_rounds: rounds,
        seed: 0,
        initial_jitter: 0.0,
        weights: scenario_weights(),
        deadlock,
        controller: ControllerGains::default(),
        plant: PlantParams::default(),
        vehicles,
    }
}

fn unstructured_road() -> ScenarioSpec {
    let vehicles = (0..3)
        .map(|k| {
            let angle = -std::f64::consts::FRAC_PI_2 + k as f64 * 2.0 * std::f64::consts::PI / 3.0;
            let start = Position2::from_polar(20.0, angle);
            let goal = -start;
            VehicleSpec {
                id: k + 1,
                position: start,
                speed: 10.0,
                heading: angle + std::f64::consts::PI,
                path: vec![start, goal],
                desired_speed: 10.0,
                geometry: VehicleGeometry::default(),
                lane_lock: None,
                exit_point: None,
            }
        })
        .collect();
    ScenarioSpec {
        name: "unstructured_road".into(),
        road: Road::Unstructured,
        control_mode: ControlMode::DirectPlacement,
        horizon: 10,
        sample_dt: 0.1,
        replan_dt: 0.1,
        total_rounds: 80,
        seed: 0,
        initial_jitter: 0.0,
        weights: scenario_weights(),
        deadlock: DeadlockSettings::new(5, 0.01, 0.2),
        controller: ControllerGains::default(),
        plant: PlantParams::default(),
        vehicles,
    }
}

fn intersection() -> ScenarioSpec {
    let center = Position2::new(0.0, 25.0);
    let half = 1.0;
    let geometry = VehicleGeometry {
        r: 2.5,
        ..VehicleGeometry::default()
    };
    let lane = |id: usize, start: (f64, f64), dir: (f64, f64)| {
        let start = Position2::new(start.0, start.1);
        let dir = Position2::new(dir.0, dir.1);
        // lateral coordinate is pinned: normal is the direction rotated by 90 degrees
        let normal = dir.rotate(std::f64::consts::FRAC_PI_2);
        let lateral = normal.dot(start);
        // outgoing lane leaves the conflict area where its along-track
        // coordinate passes the far edge of the square
        let along = dir.dot(center) + half;
        VehicleSpec {
            id,
            position: start,
            speed: 10.0,
            heading: dir.y.atan2(dir.x),
            path: vec![start, start + dir * 60.0],
            desired_speed: 10.0,
            geometry,
            lane_lock: Some(LaneLock {
                normal,
                offset: lateral,
            }),
            exit_point: Some(dir * along + normal * lateral),
        }
    };
    let mut deadlock = DeadlockSettings::new(2, 0.15, 2.0);
    deadlock.mode = DistanceModeKind::ExitPoint;
    ScenarioSpec {
        name: "intersection".into(),
        road: Road::Intersection {
            center,
            area: 2.0 * half,
        },
        control_mode: ControlMode::DirectPlacement,
        horizon: 10,
        sample_dt: 0.1,
        replan_dt: 0.1,
        total_rounds: 80,
        seed: 0,
        initial_jitter: 0.0,
        weights: scenario_weights(),
        deadlock,
        controller: ControllerGains::default(),
        plant: PlantParams::default(),
        vehicles: vec![
            lane(1, (2.0, 0.0), (0.0, 1.0)),
            lane(2, (-2.0, 50.0), (0.0, -1.0)),
            lane(3, (-25.0, 23.0), (1.0, 0.0)),
            lane(4, (25.0, 27.0), (-1.0, 0.0)),
        ],
    }
}

fn crossing() -> ScenarioSpec {
    let mut deadlock = DeadlockSettings::new(5, 0.01, 0.2);
    deadlock.ladder = vec![1.5, 1.0];
    highway(
        "crossing",
        20,
        200,
        deadlock,
        vec![
            highway_vehicle(1, 0.0, -4.0, 10.0, 4.0),
            highway_vehicle(2, 0.0, 4.0, 10.0, -4.0),
        ],
    )
}

fn platoon() -> ScenarioSpec {
    let starts = [(0.0, -4.0), (6.0, 4.0), (12.0, -4.0), (18.0, 4.0)];
    highway(
        "platoon",
        20,
        150,
        DeadlockSettings::new(5, 0.01, 0.2),
        starts
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| highway_vehicle(i + 1, x, y, 20.0, 0.0))
            .collect(),
    )
}

fn merging() -> ScenarioSpec {
    // vehicles 3 and 4 start beside 1 and 2 in the neighboring lane
    highway(
        "merging",
        25,
        300,
        DeadlockSettings::new(5, 0.01, 0.2),
        vec![
            highway_vehicle(1, 0.0, 0.0, 10.0, 0.0),
            highway_vehicle(2, 8.0, 0.0, 10.0, 0.0),
            highway_vehicle(3, 0.0, 4.0, 10.0, 0.0),
            highway_vehicle(4, 8.0, 4.0, 10.0, 0.0),
        ],
    )
}

fn overtaking() -> ScenarioSpec {
    highway(
        "overtaking",
        25,
        200,
        DeadlockSettings::new(5, 0.01, 0.2),
        vec![
            highway_vehicle(1, 0.0, 0.0, 50.0, 0.0),
            highway_vehicle(2, 15.0, 0.0, 10.0, 0.0),
            highway_vehicle(3, 20.0, -4.0, 10.0, -4.0),
            highway_vehicle(4, 25.0, 0.0, 10.0, 0.0),
        ],
    )
}

/// Formation of `count` vehicles alternating between y = -4 and y = 4,
/// 6 m apart, all targeting y = 0 at 20 m/s with H = 20.
pub fn formation(
    count: usize,
    control_mode: ControlMode,
    sample_dt: f64,
    replan_dt: f64,
    rounds: usize,
) -> ScenarioSpec {
    let vehicles = (0..count)
        .map(|i| {
            let y = if i % 2 == 0 { -4.0 } else { 4.0 };
            highway_vehicle(i + 1, 6.0 * i as f64, y, 20.0, 0.0)
        })
        .collect();
    let mut spec = highway(
        &format!("formation_{count}"),
        20,
        rounds,
        DeadlockSettings::new(5, 0.01, 0.2),
        vehicles,
    );
    spec.control_mode = control_mode;
    spec.sample_dt = sample_dt;
    spec.replan_dt = replan_dt;
    spec
}
