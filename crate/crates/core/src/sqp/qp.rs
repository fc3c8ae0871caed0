//! Dense dual active-set solver for small strictly convex QPs,
//!
//! ```text
//!     minimize    1/2 x' H x + g' x
//!     subject to  A x + b >= 0
//! ```
//!
//! following Goldfarb and Idnani: start from the unconstrained minimizer and
//! add the most violated constraint until primal feasibility, dropping
//! constraints whose multipliers would turn negative. Problems here have at
//! most a few dozen variables, so the reduced systems are refactored on every
//! change of the active set rather than updated.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("Hessian is not positive definite")]
    NotConvex,
    #[error("constraints are infeasible (violation {violation:.3e} on row {row})")]
    Infeasible { row: usize, violation: f64 },
    #[error("active-set iteration limit reached")]
    IterationLimit,
    #[error("dimension mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One multiplier per constraint row, zero for inactive rows.
    pub multipliers: DVector<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    pub feasibility_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self { feasibility_tolerance: 1e-10, max_iterations: 500 }
    }
}

/// Solve the QP with constraint rows `a` (m x n) and offsets `b` (m).
pub fn solve(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    settings: &QpSettings,
) -> Result<QpSolution, QpError> {
    let n = g.len();
    let m = b.len();
    if h.nrows() != n || h.ncols() != n || a.nrows() != m || (m > 0 && a.ncols() != n) {
        return Err(QpError::Shape(format!("H {}x{}, g {n}, A {}x{}, b {m}", h.nrows(), h.ncols(), a.nrows(), a.ncols())));
    }
    let chol = Cholesky::new(h.clone()).ok_or(QpError::NotConvex)?;
    let h_inv = chol.inverse();

    let mut x = -(&h_inv * g);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let row_norms: Vec<f64> = (0..m).map(|i| a.row(i).norm().max(1e-300)).collect();
    let tol = settings.feasibility_tolerance;
    let mut iterations = 0;

    loop {
        // Most violated inactive constraint, scaled by row norm.
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..m {
            if active.contains(&i) {
                continue;
            }
            let s = (a.row(i) * &x)[0] + b[i];
            let scaled = s / row_norms[i];
            if scaled < -tol && pick.is_none_or(|(_, best)| scaled < best) {
                pick = Some((i, scaled));
            }
        }
        let Some((p, _)) = pick else { break };
        let a_p: DVector<f64> = a.row(p).transpose();
        let mut u_p = 0.0;

        loop {
            iterations += 1;
            if iterations > settings.max_iterations {
                return Err(QpError::IterationLimit);
            }
            let (z, r) = step_directions(&h_inv, a, &active, &a_p);
            // Largest dual step keeping active multipliers nonnegative.
            let mut t_dual = f64::INFINITY;
            let mut blocking = None;
            for (k, &rk) in r.iter().enumerate() {
                if rk > 1e-14 {
                    let ratio = u[k] / rk;
                    if ratio < t_dual {
                        t_dual = ratio;
                        blocking = Some(k);
                    }
                }
            }
            let curvature = z.dot(&a_p);
            let s_p = a_p.dot(&x) + b[p];
            if curvature <= 1e-14 * a_p.norm_squared().max(1.0) * h_inv.diagonal().amax().max(1e-300) {
                // a_p lies in the span of the active normals.
                let Some(k) = blocking else {
                    return Err(QpError::Infeasible { row: p, violation: -s_p });
                };
                for (uk, rk) in u.iter_mut().zip(r.iter()) {
                    *uk -= t_dual * rk;
                }
                u_p += t_dual;
                active.remove(k);
                u.remove(k);
                continue;
            }
            let t_primal = -s_p / curvature;
            let t = t_primal.min(t_dual);
            x += &z * t;
            for (uk, rk) in u.iter_mut().zip(r.iter()) {
                *uk -= t * rk;
            }
            u_p += t;
            if t_primal <= t_dual {
                active.push(p);
                u.push(u_p);
                break;
            }
            let k = blocking.expect("partial step implies a blocking constraint");
            active.remove(k);
            u.remove(k);
        }
    }

    let mut multipliers = DVector::zeros(m);
    for (&i, &ui) in active.iter().zip(u.iter()) {
        multipliers[i] = ui.max(0.0);
    }
    Ok(QpSolution { x, multipliers, active, iterations })
}

/// Primal direction `z` and dual direction `r` for adding `a_p` to the
/// active set.
fn step_directions(
    h_inv: &DMatrix<f64>,
    a: &DMatrix<f64>,
    active: &[usize],
    a_p: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let hinv_ap = h_inv * a_p;
    if active.is_empty() {
        return (hinv_ap, DVector::zeros(0));
    }
    let n = a_p.len();
    let q = active.len();
    let mut normals = DMatrix::zeros(n, q);
    for (k, &i) in active.iter().enumerate() {
        normals.set_column(k, &a.row(i).transpose());
    }
    let hinv_n = h_inv * &normals;
    let reduced = normals.transpose() * &hinv_n;
    let rhs = normals.transpose() * &hinv_ap;
    let r = match Cholesky::<f64, Dyn>::new(reduced.clone()) {
        Some(c) => c.solve(&rhs),
        None => reduced.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(q)),
    };
    let z = hinv_ap - hinv_n * &r;
    (z, r)
}
