//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use cfs_dmpc::qp::QuadraticProgram;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random strictly convex QP with a known feasible point.
pub fn random_qp(
    rng: &mut ChaCha8Rng,
    max_n: usize,
    max_m: usize,
    max_eq: usize,
) -> QuadraticProgram {
    let n = rng.random_range(1..=max_n);
    let m = rng.random_range(1..=max_m);
    let p = rng.random_range(0..=max_eq.min(n.saturating_sub(1)));
    let unif = |r: &mut ChaCha8Rng| r.random_range(-1.0..1.0);
    let b = DMatrix::from_fn(n, n, |_, _| unif(rng));
    let cost = b.transpose() * &b + DMatrix::identity(n, n) * 0.1;
    let cost = (&cost + cost.transpose()) * 0.5;
    let linear = DVector::from_fn(n, |_, _| 5.0 * unif(rng));
    let z_feasible = DVector::from_fn(n, |_, _| unif(rng));
    let a = DMatrix::from_fn(m, n, |_, _| unif(rng));
    let slack = DVector::from_fn(m, |_, _| rng.random_range(0.0..1.0));
    let rhs = &a * &z_feasible + slack;
    let e = DMatrix::from_fn(p, n, |_, _| unif(rng));
    let f = &e * &z_feasible;
    QuadraticProgram::new(cost, linear, a, rhs, e, f).unwrap()
}

/// Exhaustive active-set enumeration. Subsets are visited by increasing
/// size; for each, the equality-constrained KKT system is solved directly and
/// the first point that is primal and dual feasible is returned. For a
/// strictly convex problem that point is the unique minimizer.
pub fn brute_force_qp(qp: &QuadraticProgram) -> Option<DVector<f64>> {
    let n = qp.dim();
    let m = qp.num_ineq();
    let p = qp.num_eq();
    for size in 0..=m.min(n - p.min(n)) {
        let mut subset: Vec<usize> = (0..size).collect();
        loop {
            if let Some(z) = kkt_point(qp, &subset) {
                return Some(z);
            }
            if !next_combination(&mut subset, m) {
                break;
            }
        }
    }
    None
}

fn kkt_point(qp: &QuadraticProgram, active: &[usize]) -> Option<DVector<f64>> {
    let n = qp.dim();
    let p = qp.num_eq();
    let k = p + active.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    let mut rhs = DVector::zeros(n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&qp.cost);
    rhs.rows_mut(0, n).copy_from(&(-&qp.linear));
    for r in 0..p {
        for c in 0..n {
            kkt[(n + r, c)] = qp.eq_matrix[(r, c)];
            kkt[(c, n + r)] = qp.eq_matrix[(r, c)];
        }
        rhs[n + r] = qp.eq_rhs[r];
    }
    for (j, &i) in active.iter().enumerate() {
        for c in 0..n {
            kkt[(n + p + j, c)] = qp.ineq_matrix[(i, c)];
            kkt[(c, n + p + j)] = qp.ineq_matrix[(i, c)];
        }
        rhs[n + p + j] = qp.ineq_rhs[i];
    }
    let lu = kkt.lu();
    if lu.determinant().abs() < 1e-12 {
        return None;
    }
    let sol = lu.solve(&rhs)?;
    let z = sol.rows(0, n).into_owned();
    let multipliers_ok = (0..active.len()).all(|j| sol[n + p + j] >= -1e-9);
    let primal_ok = (&qp.ineq_matrix * &z - &qp.ineq_rhs)
        .iter()
        .all(|v| *v <= 1e-9);
    (multipliers_ok && primal_ok).then_some(z)
}

fn next_combination(subset: &mut [usize], m: usize) -> bool {
    let k = subset.len();
    for i in (0..k).rev() {
        if subset[i] < m - k + i {
            subset[i] += 1;
            for j in i + 1..k {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Second difference of consecutive points, computed point by point.
pub fn second_differences(points: &[[f64; 2]], dt: f64) -> Vec<f64> {
    points
        .windows(3)
        .flat_map(|w| {
            [
                (w[2][0] - 2.0 * w[1][0] + w[0][0]) / (dt * dt),
                (w[2][1] - 2.0 * w[1][1] + w[0][1]) / (dt * dt),
            ]
        })
        .collect()
}

/// Fine-step RK4 integration of the unicycle `x' = cos(theta)`,
/// `y' = sin(theta)`, `theta' = curvature` over arc length.
pub fn integrate_arc(
    x: f64,
    y: f64,
    theta: f64,
    curvature: f64,
    length: f64,
    steps: usize,
) -> (f64, f64, f64) {
    let ds = length / steps as f64;
    let f = |th: f64| (th.cos(), th.sin());
    let (mut px, mut py, mut th) = (x, y, theta);
    for _ in 0..steps {
        let k1 = f(th);
        let k2 = f(th + 0.5 * ds * curvature);
        let k3 = k2;
        let k4 = f(th + ds * curvature);
        px += ds / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        py += ds / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        th += ds * curvature;
    }
    (px, py, th)
}

/// Single vehicle driving along y = 0 at 10 m/s towards a parked obstacle at
/// (10, 0.5), turned 0.3 rad. The warm start passes it at y = 5.
pub struct ObstacleFixture {
    pub planner: cfs_dmpc::planner::Planner,
    pub current: cfs_dmpc::Position2,
    pub initial: cfs_dmpc::Trajectory,
    pub obstacle: cfs_dmpc::Trajectory,
    pub obstacle_heading: f64,
    pub reference: cfs_dmpc::Trajectory,
}

pub fn obstacle_fixture() -> ObstacleFixture {
    use cfs_dmpc::{PlannerWeights, Position2, Trajectory, VehicleGeometry};
    let horizon = 20;
    let dt = 0.1;
    let reference: Vec<Position2> = (1..=horizon)
        .map(|h| Position2::new(h as f64, 0.0))
        .collect();
    let initial = reference.iter().map(|p| Position2::new(p.x, 5.0)).collect();
    ObstacleFixture {
        planner: cfs_dmpc::planner::Planner::new(
            VehicleGeometry::default(),
            PlannerWeights::new(1.0, 0.01, 1000.0).unwrap(),
        ),
        current: Position2::new(0.0, 0.0),
        initial: Trajectory::new(initial, dt).unwrap(),
        obstacle: Trajectory::stationary(Position2::new(10.0, 0.5), horizon, dt).unwrap(),
        obstacle_heading: 0.3,
        reference: Trajectory::new(reference, dt).unwrap(),
    }
}

/// Closed-form step against fine RK4 integration of the same arc.
pub fn max_kinematics_error(cases: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    use cfs_dmpc::vehicle::{kinematic_step, ControlInput, PlantParams};
    use cfs_dmpc::{Position2, VehicleState};
    let params = PlantParams::default();
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let state = VehicleState::new(
            Position2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)),
            rng.random_range(0.5..30.0),
            rng.random_range(-3.0..3.0),
        )
        .unwrap();
        let input = ControlInput::new(rng.random_range(-3.0..3.0), rng.random_range(-0.5..0.5));
        let dt = rng.random_range(0.01..0.2);
        let next = kinematic_step(&state, input, &params, dt);
        let v1 = (state.speed + input.accel() * dt).max(0.0);
        let length = if v1 > 0.0 {
            state.speed * dt + 0.5 * input.accel() * dt * dt
        } else {
            state.speed * state.speed / (2.0 * input.accel().abs())
        };
        let (x, y, _) = integrate_arc(
            state.position.x,
            state.position.y,
            state.heading,
            input.steer().tan() / length,
            length,
            2000,
        );
        worst = worst.max(next.position.distance(Position2::new(x, y)));
    }
    worst
}
