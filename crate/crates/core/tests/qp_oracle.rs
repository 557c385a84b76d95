mod common;

use cfs_dmpc::qp::{ActiveSetSolver, QpStatus};
use nalgebra::DVector;
use rand::Rng;

#[test]
fn random_qps_match_enumeration_oracle() {
    let mut rng = common::rng(7);
    let mut solver = ActiveSetSolver::default();
    for case in 0..100 {
        let qp = common::random_qp(&mut rng, 10, 20, 2);
        let expected = common::brute_force_qp(&qp).expect("oracle finds the minimizer");
        let sol = solver.solve(&qp, None);
        assert_eq!(sol.status, QpStatus::Optimal, "case {case}");
        let err = (&sol.z - &expected).amax();
        assert!(err < 1e-6, "case {case}: solution error {err:e}");
        let obj_err = (sol.objective_value - qp.objective(&expected)).abs();
        assert!(obj_err < 1e-6, "case {case}: objective error {obj_err:e}");
    }
}

#[test]
fn optimal_solutions_satisfy_kkt() {
    let mut rng = common::rng(11);
    let mut solver = ActiveSetSolver::default();
    for _ in 0..200 {
        let qp = common::random_qp(&mut rng, 10, 20, 2);
        let sol = solver.solve(&qp, None);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!(qp.max_violation(&sol.z) <= 1e-6);
        assert!(sol.stationarity_residual(&qp) <= 1e-6);
        assert!(sol.ineq_multipliers.iter().all(|l| *l >= 0.0));
        let slack = &qp.ineq_rhs - &qp.ineq_matrix * &sol.z;
        let compl = slack.component_mul(&sol.ineq_multipliers).amax();
        assert!(compl <= 1e-6, "complementarity {compl:e}");
    }
}

#[test]
fn warm_start_does_not_change_minimizer() {
    let mut rng = common::rng(13);
    let mut solver = ActiveSetSolver::default();
    for _ in 0..50 {
        let qp = common::random_qp(&mut rng, 10, 20, 2);
        let cold = solver.solve(&qp, None);
        let guess = DVector::from_fn(qp.dim(), |_, _| rng.random_range(-3.0..3.0));
        let warm = solver.solve(&qp, Some(&guess));
        assert_eq!(warm.status, QpStatus::Optimal);
        assert!((&cold.z - &warm.z).amax() < 1e-6);
        let hot = solver.solve(&qp, Some(&cold.z));
        assert!((&cold.z - &hot.z).amax() < 1e-6);
    }
}

#[test]
fn beats_random_feasible_samples() {
    let mut rng = common::rng(17);
    let mut solver = ActiveSetSolver::default();
    for _ in 0..30 {
        let qp = common::random_qp(&mut rng, 6, 10, 0);
        let sol = solver.solve(&qp, None);
        let mut checked = 0;
        while checked < 200 {
            let z = &sol.z + DVector::from_fn(qp.dim(), |_, _| rng.random_range(-1.0..1.0));
            if qp.max_violation(&z) > 0.0 {
                continue;
            }
            assert!(sol.objective_value <= qp.objective(&z) + 1e-9);
            checked += 1;
        }
    }
}

#[test]
fn solve_is_deterministic() {
    let mut rng = common::rng(19);
    let qp = common::random_qp(&mut rng, 10, 20, 2);
    let a = ActiveSetSolver::default().solve(&qp, None);
    let b = ActiveSetSolver::default().solve(&qp, None);
    assert_eq!(a.z.as_slice(), b.z.as_slice());
    assert_eq!(a.iterations, b.iterations);
}
