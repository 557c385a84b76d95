mod common;

use cfs_dmpc::vehicle::{kinematic_step, ControlInput, PlantParams};
use cfs_dmpc::{Position2, VehicleState};

#[test]
fn closed_form_matches_integration() {
    let err = common::max_kinematics_error(500, 3);
    assert!(err < 1e-6, "max error {err:e}");
}

#[test]
fn straight_limit_is_continuous() {
    let params = PlantParams::default();
    let state = VehicleState::new(Position2::new(1.0, 2.0), 10.0, 0.3).unwrap();
    let straight = kinematic_step(&state, ControlInput::new(0.5, 0.0), &params, 0.1);
    for steer in [1e-12, 1e-9, 1e-8, 1.0001e-8, 1e-7, -1e-8] {
        let bent = kinematic_step(&state, ControlInput::new(0.5, steer), &params, 0.1);
        let gap = bent.position.distance(straight.position);
        assert!(gap < 1e-7, "steer {steer:e}: gap {gap:e}");
    }
}

#[test]
fn braking_stops_without_reversing() {
    let params = PlantParams::default();
    let state = VehicleState::new(Position2::new(0.0, 0.0), 1.0, 0.0).unwrap();
    let next = kinematic_step(&state, ControlInput::new(-3.0, 0.0), &params, 1.0);
    assert_eq!(next.speed, 0.0);
    assert!((next.position.x - 1.0 / 6.0).abs() < 1e-12);
}
