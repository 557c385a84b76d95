//! Dense convex quadratic programming.
//!
//! Solves
//!
//! ```text
//!     minimize    1/2 z' Q z + q' z
//!     subject to  A z <= b
//!                 E z  = f
//! ```
//!
//! with a primal active-set method. Each working-set subproblem is solved in
//! range-space form through the Cholesky factor `L` of `Q`: with
//! `U = L^-1 A_w'`, the multipliers solve `(U'U) lambda = -U' L^-1 g`. The
//! columns of `U` are cached per constraint row, so a solve costs one
//! triangular solve per constraint touched plus a small dense system per
//! iteration.
//!
//! A starting point that is not feasible is repaired first: the equality
//! rows are met by a least-norm correction, then an auxiliary problem with a
//! single extra variable `t` bounding every inequality violation
//! (`A z - t <= b`, `t >= 0`, minimizing `t`) is solved from the trivially
//! feasible point `t = max violation`. A strictly positive optimal `t` is the
//! infeasibility certificate.

use std::io::{self, Write};
use std::path::PathBuf;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Added to the diagonal when `Q` is only semidefinite.
pub const SEMIDEFINITE_REGULARIZATION: f64 = 1e-9;

const PHASE_ONE_REGULARIZATION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub cost: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
}

impl QuadraticProgram {
    pub fn new(
        cost: DMatrix<f64>,
        linear: DVector<f64>,
        ineq_matrix: DMatrix<f64>,
        ineq_rhs: DVector<f64>,
        eq_matrix: DMatrix<f64>,
        eq_rhs: DVector<f64>,
    ) -> Result<Self> {
        let n = linear.len();
        let check = |context, expected, actual| {
            if expected == actual {
                Ok(())
            } else {
                Err(Error::Dimension {
                    context,
                    expected,
                    actual,
                })
            }
        };
        check("cost rows", n, cost.nrows())?;
        check("cost columns", n, cost.ncols())?;
        check("inequality columns", n, ineq_matrix.ncols())?;
        check("inequality rhs", ineq_matrix.nrows(), ineq_rhs.len())?;
        check("equality columns", n, eq_matrix.ncols())?;
        check("equality rhs", eq_matrix.nrows(), eq_rhs.len())?;
        let asym = (&cost - cost.transpose()).abs().max();
        if asym > 1e-9 {
            return Err(Error::invalid(
                "quadratic program",
                format!("cost matrix not symmetric (max asymmetry {asym:e})"),
            ));
        }
        Ok(QuadraticProgram {
            cost,
            linear,
            ineq_matrix,
            ineq_rhs,
            eq_matrix,
            eq_rhs,
        })
    }

    /// Box-free problem with only a cost.
    pub fn unconstrained(cost: DMatrix<f64>, linear: DVector<f64>) -> Result<Self> {
        let n = linear.len();
        QuadraticProgram::new(
            cost,
            linear,
            DMatrix::zeros(0, n),
            DVector::zeros(0),
            DMatrix::zeros(0, n),
            DVector::zeros(0),
        )
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.ineq_rhs.len()
    }

    pub fn num_eq(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.cost * z)) + self.linear.dot(z)
    }

    /// Largest violation of any constraint at `z` (zero when feasible).
    pub fn max_violation(&self, z: &DVector<f64>) -> f64 {
        let ineq = (&self.ineq_matrix * z - &self.ineq_rhs).max().max(0.0);
        let eq = if self.num_eq() > 0 {
            (&self.eq_matrix * z - &self.eq_rhs).abs().max()
        } else {
            0.0
        };
        ineq.max(eq)
    }

    /// Writes the problem as plain-text matrices, one block per field.
    pub fn write_text<W: Write>(&self, mut out: W) -> io::Result<()> {
        fn block<W: Write>(out: &mut W, name: &str, m: &DMatrix<f64>) -> io::Result<()> {
            writeln!(out, "# {name} {} {}", m.nrows(), m.ncols())?;
            for r in 0..m.nrows() {
                let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:.17e}")).collect();
                writeln!(out, "{}", row.join(" "))?;
            }
            Ok(())
        }
        let col = |v: &DVector<f64>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        block(&mut out, "Q", &self.cost)?;
        block(&mut out, "q", &col(&self.linear))?;
        block(&mut out, "A", &self.ineq_matrix)?;
        block(&mut out, "b", &col(&self.ineq_rhs))?;
        block(&mut out, "E", &self.eq_matrix)?;
        block(&mut out, "f", &col(&self.eq_rhs))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub objective_value: f64,
    pub status: QpStatus,
    pub iterations: usize,
    /// Multipliers of `A z <= b`; zero for inactive rows.
    pub ineq_multipliers: DVector<f64>,
    pub eq_multipliers: DVector<f64>,
}

impl QpSolution {
    /// Infinity norm of `Q z + q + A' lambda + E' mu`.
    pub fn stationarity_residual(&self, qp: &QuadraticProgram) -> f64 {
        let r = &qp.cost * &self.z
            + &qp.linear
            + qp.ineq_matrix.transpose() * &self.ineq_multipliers
            + qp.eq_matrix.transpose() * &self.eq_multipliers;
        r.amax()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSettings {
    pub max_iterations: usize,
    pub feasibility_tol: f64,
    pub dual_tol: f64,
    /// Non-optimal problems are written here when set.
    pub dump_dir: Option<PathBuf>,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            max_iterations: 200,
            feasibility_tol: 1e-6,
            dual_tol: 1e-9,
            dump_dir: None,
        }
    }
}

/// Reusable active-set solver. Holds scratch state, so give each planner its
/// own instance.
#[derive(Debug, Clone, Default)]
pub struct ActiveSetSolver {
    settings: QpSettings,
    dumped: usize,
}

enum Outcome {
    Converged,
    IterationLimit,
}

struct PhaseResult {
    z: DVector<f64>,
    outcome: Outcome,
    iterations: usize,
    ineq_multipliers: DVector<f64>,
    eq_multipliers: DVector<f64>,
}

impl ActiveSetSolver {
    pub fn new(settings: QpSettings) -> Self {
        ActiveSetSolver {
            settings,
            dumped: 0,
        }
    }

    pub fn settings(&self) -> &QpSettings {
        &self.settings
    }

    pub fn solve(
        &mut self,
        qp: &QuadraticProgram,
        warm_start: Option<&DVector<f64>>,
    ) -> QpSolution {
        let solution = self.solve_inner(qp, warm_start);
        if solution.status != QpStatus::Optimal {
            self.dump(qp, &solution);
        }
        solution
    }

    fn dump(&mut self, qp: &QuadraticProgram, solution: &QpSolution) {
        let Some(dir) = self.settings.dump_dir.clone() else {
            return;
        };
        self.dumped += 1;
        let path = dir.join(format!("qp_{:05}_{:?}.txt", self.dumped, solution.status));
        let written = std::fs::create_dir_all(&dir)
            .and_then(|_| std::fs::File::create(&path))
            .and_then(|f| qp.write_text(io::BufWriter::new(f)));
        if let Err(e) = written {
            log::warn!("could not dump QP to {}: {e}", path.display());
        }
    }

    fn solve_inner(&self, qp: &QuadraticProgram, warm_start: Option<&DVector<f64>>) -> QpSolution {
        let n = qp.dim();
        let tol = self.settings.feasibility_tol;
        let start = match warm_start {
            Some(w) if w.len() == n => w.clone(),
            _ => DVector::zeros(n),
        };

        let infeasible = |z: DVector<f64>, iterations| QpSolution {
            objective_value: qp.objective(&z),
            z,
            status: QpStatus::Infeasible,
            iterations,
            ineq_multipliers: DVector::zeros(qp.num_ineq()),
            eq_multipliers: DVector::zeros(qp.num_eq()),
        };

        let Some(mut z) = project_onto_equalities(qp, &start, tol) else {
            return infeasible(start, 0);
        };

        let mut iterations = 0;
        let violation = if qp.num_ineq() > 0 {
            (&qp.ineq_matrix * &z - &qp.ineq_rhs).max()
        } else {
            f64::NEG_INFINITY
        };
        if violation > tol {
            let phase_one = phase_one_problem(qp, &z);
            let mut y0 = DVector::zeros(n + 1);
            y0.rows_mut(0, n).copy_from(&z);
            y0[n] = violation;
            let limit = self.settings.max_iterations * 4;
            let Some(result) = run_active_set(&phase_one, y0, limit, &self.settings) else {
                return infeasible(z, iterations);
            };
            iterations += result.iterations;
            let t = result.z[n];
            if let Outcome::IterationLimit = result.outcome {
                if t > tol {
                    return QpSolution {
                        status: QpStatus::MaxIterations,
                        ..infeasible(z, iterations)
                    };
                }
            }
            if t > tol {
                log::debug!("QP infeasible: minimal uniform violation {t:e}");
                return infeasible(result.z.rows(0, n).into_owned(), iterations);
            }
            z = result.z.rows(0, n).into_owned();
        }

        let remaining = self
            .settings
            .max_iterations
            .saturating_sub(iterations)
            .max(1);
        let Some(result) = run_active_set(qp, z.clone(), remaining, &self.settings) else {
            return infeasible(z, iterations);
        };
        iterations += result.iterations;
        let status = match result.outcome {
            Outcome::Converged => QpStatus::Optimal,
            Outcome::IterationLimit => QpStatus::MaxIterations,
        };
        QpSolution {
            objective_value: qp.objective(&result.z),
            z: result.z,
            status,
            iterations,
            ineq_multipliers: result.ineq_multipliers,
            eq_multipliers: result.eq_multipliers,
        }
    }
}

/// Least-norm correction of `z` onto `E z = f`; `None` when the equality
/// rows are inconsistent.
fn project_onto_equalities(
    qp: &QuadraticProgram,
    z: &DVector<f64>,
    tol: f64,
) -> Option<DVector<f64>> {
    if qp.num_eq() == 0 {
        return Some(z.clone());
    }
    let e = &qp.eq_matrix;
    let residual = e * z - &qp.eq_rhs;
    if residual.amax() <= tol * 1e-3 {
        return Some(z.clone());
    }
    let gram = e * e.transpose();
    let correction = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&residual),
        None => gram.pseudo_inverse(1e-12).ok()? * &residual,
    };
    let projected = z - e.transpose() * correction;
    ((e * &projected - &qp.eq_rhs).amax() <= tol).then_some(projected)
}

/// Variables `(z, t)`: minimize `t` (plus a small proximal term keeping the
/// problem strictly convex) subject to `A z - t <= b`, `t >= 0`, `E z = f`.
fn phase_one_problem(qp: &QuadraticProgram, anchor: &DVector<f64>) -> QuadraticProgram {
    let n = qp.dim();
    let m = qp.num_ineq();
    let rho = PHASE_ONE_REGULARIZATION;
    let cost = DMatrix::from_diagonal_element(n + 1, n + 1, rho);
    let mut linear = DVector::zeros(n + 1);
    linear.rows_mut(0, n).copy_from(&(anchor * -rho));
    linear[n] = 1.0;

    let mut a = DMatrix::zeros(m + 1, n + 1);
    a.view_mut((0, 0), (m, n)).copy_from(&qp.ineq_matrix);
    a.view_mut((0, n), (m, 1)).fill(-1.0);
    a[(m, n)] = -1.0;
    let mut b = DVector::zeros(m + 1);
    b.rows_mut(0, m).copy_from(&qp.ineq_rhs);

    let mut e = DMatrix::zeros(qp.num_eq(), n + 1);
    e.view_mut((0, 0), (qp.num_eq(), n))
        .copy_from(&qp.eq_matrix);

    QuadraticProgram {
        cost,
        linear,
        ineq_matrix: a,
        ineq_rhs: b,
        eq_matrix: e,
        eq_rhs: qp.eq_rhs.clone(),
    }
}

fn factor_cost(cost: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    cost.clone().cholesky().or_else(|| {
        let n = cost.nrows();
        (cost + DMatrix::from_diagonal_element(n, n, SEMIDEFINITE_REGULARIZATION)).cholesky()
    })
}

/// Cached `L^-1 a'` columns for each constraint row.
struct RowCache<'a> {
    chol: &'a Cholesky<f64, Dyn>,
    eq: Vec<DVector<f64>>,
    ineq: Vec<Option<DVector<f64>>>,
}

impl<'a> RowCache<'a> {
    fn new(qp: &QuadraticProgram, chol: &'a Cholesky<f64, Dyn>) -> Option<Self> {
        let l = chol.l_dirty();
        let mut eq = Vec::with_capacity(qp.num_eq());
        for r in 0..qp.num_eq() {
            let row = qp.eq_matrix.row(r).transpose();
            eq.push(lower_solve(l, row)?);
        }
        Some(RowCache {
            chol,
            eq,
            ineq: vec![None; qp.num_ineq()],
        })
    }

    fn ineq(&mut self, qp: &QuadraticProgram, i: usize) -> Option<&DVector<f64>> {
        if self.ineq[i].is_none() {
            let row = qp.ineq_matrix.row(i).transpose();
            self.ineq[i] = Some(lower_solve(self.chol.l_dirty(), row)?);
        }
        self.ineq[i].as_ref()
    }
}

fn lower_solve(l: &DMatrix<f64>, mut rhs: DVector<f64>) -> Option<DVector<f64>> {
    // l_dirty's strict upper triangle is garbage; the lower solve ignores it
    l.solve_lower_triangular_mut(&mut rhs).then_some(rhs)
}

/// Primal active-set iterations from a feasible `z`.
fn run_active_set(
    qp: &QuadraticProgram,
    mut z: DVector<f64>,
    max_iterations: usize,
    settings: &QpSettings,
) -> Option<PhaseResult> {
    let n = qp.dim();
    let n_eq = qp.num_eq();
    let chol = factor_cost(&qp.cost)?;
    let l = chol.l();
    let mut cache = RowCache::new(qp, &chol)?;
    let mut working: Vec<usize> = Vec::new();
    let mut in_working = vec![false; qp.num_ineq()];
    let mut iterations = 0;
    // set after an unblocked full step: z is then the working-set minimizer
    let mut at_subspace_min = false;

    loop {
        let qz = &qp.cost * &z;
        let scale = 1.0 + qz.amax() + qp.linear.amax();
        let gradient = qz + &qp.linear;
        let mut g_hat = gradient.clone();
        l.solve_lower_triangular_mut(&mut g_hat);

        let k = n_eq + working.len();
        let mut u = DMatrix::zeros(n, k);
        for (c, col) in cache.eq.iter().enumerate() {
            u.set_column(c, col);
        }
        for (c, &i) in working.iter().enumerate() {
            let col = cache.ineq(qp, i)?.clone();
            u.set_column(n_eq + c, &col);
        }

        let lambda = if k > 0 {
            let gram = u.transpose() * &u;
            let rhs = -(u.transpose() * &g_hat);
            match gram.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => gram.lu().solve(&rhs)?,
            }
        } else {
            DVector::zeros(0)
        };

        // p = -L^-T (g_hat + U lambda)
        let mut p = -(&g_hat + &u * &lambda);
        l.tr_solve_lower_triangular_mut(&mut p);

        // residual of the working-set stationarity condition g + A_w' lambda
        let mut residual = gradient.clone();
        for (c, row) in (0..n_eq).map(|r| qp.eq_matrix.row(r)).enumerate() {
            residual += row.transpose() * lambda[c];
        }
        for (c, &i) in working.iter().enumerate() {
            residual += qp.ineq_matrix.row(i).transpose() * lambda[n_eq + c];
        }
        if at_subspace_min || residual.amax() <= 1e-10 * scale {
            at_subspace_min = false;
            // KKT point of the working set; check inequality multipliers
            let mut most_negative = None;
            let mut worst = -settings.dual_tol;
            for (c, _) in working.iter().enumerate() {
                let mu = lambda[n_eq + c];
                if mu < worst {
                    worst = mu;
                    most_negative = Some(c);
                }
            }
            match most_negative {
                None => {
                    let mut ineq_multipliers = DVector::zeros(qp.num_ineq());
                    for (c, &i) in working.iter().enumerate() {
                        ineq_multipliers[i] = lambda[n_eq + c].max(0.0);
                    }
                    let eq_multipliers = lambda.rows(0, n_eq).into_owned();
                    return Some(PhaseResult {
                        z,
                        outcome: Outcome::Converged,
                        iterations,
                        ineq_multipliers,
                        eq_multipliers,
                    });
                }
                Some(c) => {
                    let i = working.remove(c);
                    in_working[i] = false;
                }
            }
        } else {
            let mut alpha = 1.0;
            let mut blocking = None;
            for (i, _) in in_working.iter().enumerate().filter(|(_, w)| !**w) {
                let row = qp.ineq_matrix.row(i);
                let ap = row.dot(&p.transpose());
                if ap <= 1e-14 * (1.0 + p.amax()) {
                    continue;
                }
                let slack = (qp.ineq_rhs[i] - row.dot(&z.transpose())).max(0.0);
                let ratio = slack / ap;
                if ratio < alpha {
                    alpha = ratio;
                    blocking = Some(i);
                }
            }
            z += &p * alpha;
            match blocking {
                Some(i) => {
                    working.push(i);
                    in_working[i] = true;
                }
                None => at_subspace_min = true,
            }
        }

        iterations += 1;
        if iterations >= max_iterations {
            return Some(PhaseResult {
                z,
                outcome: Outcome::IterationLimit,
                iterations,
                ineq_multipliers: DVector::zeros(qp.num_ineq()),
                eq_multipliers: DVector::zeros(n_eq),
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn active_upper_bound() {
        // min 1/2 (z-2)^2  s.t. z <= 1
        let qp = QuadraticProgram::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, -2.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
        )
        .unwrap();
        let sol = ActiveSetSolver::default().solve(&qp, None);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_abs_diff_eq!(sol.z[0], 1.0, epsilon = 1e-12);
        // objective with the constant 2 restored: 1/2 (1-2)^2
        assert_abs_diff_eq!(sol.objective_value + 2.0, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.ineq_multipliers[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn equality_by_symmetry() {
        let qp = QuadraticProgram::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_element(1, 2.0),
        )
        .unwrap();
        let sol = ActiveSetSolver::default().solve(&qp, None);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_abs_diff_eq!(sol.z[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.z[1], 1.0, epsilon = 1e-12);
        assert!(sol.stationarity_residual(&qp) < 1e-9);
    }

    #[test]
    fn detects_infeasibility() {
        // z <= -1 and -z <= -1 (z >= 1)
        let qp = QuadraticProgram::new(
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DVector::from_row_slice(&[-1.0, -1.0]),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
        )
        .unwrap();
        let sol = ActiveSetSolver::default().solve(&qp, None);
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn inconsistent_equalities_are_infeasible() {
        let qp = QuadraticProgram::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            DVector::from_row_slice(&[1.0, 2.0]),
        )
        .unwrap();
        let sol = ActiveSetSolver::default().solve(&qp, None);
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn semidefinite_cost_is_regularized() {
        // min z1 s.t. z1 >= 1, Q = diag(0, 1)
        let qp = QuadraticProgram::new(
            DMatrix::from_diagonal(&DVector::from_row_slice(&[0.0, 1.0])),
            DVector::from_row_slice(&[1.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]),
            DVector::from_element(1, -1.0),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
        )
        .unwrap();
        let sol = ActiveSetSolver::default().solve(&qp, None);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_abs_diff_eq!(sol.z[0], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn rejects_asymmetric_cost() {
        let err = QuadraticProgram::unconstrained(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
            DVector::zeros(2),
        );
        assert!(err.is_err());
    }

    #[test]
    fn iteration_cap_reported() {
        let n = 6;
        let qp = QuadraticProgram::new(
            DMatrix::identity(n, n),
            DVector::from_element(n, -10.0),
            DMatrix::identity(n, n),
            DVector::from_element(n, 1.0),
            DMatrix::zeros(0, n),
            DVector::zeros(0),
        )
        .unwrap();
        let mut solver = ActiveSetSolver::new(QpSettings {
            max_iterations: 2,
            ..QpSettings::default()
        });
        assert_eq!(solver.solve(&qp, None).status, QpStatus::MaxIterations);
    }

    #[test]
    fn text_dump_has_every_block() {
        let qp =
            QuadraticProgram::unconstrained(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        let mut buf = Vec::new();
        qp.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        for tag in [
            "# Q 2 2", "# q 2 1", "# A 0 2", "# b 0 1", "# E 0 2", "# f 0 1",
        ] {
            assert!(text.contains(tag), "{text}");
        }
    }
}
