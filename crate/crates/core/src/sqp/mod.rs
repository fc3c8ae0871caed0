//! Line-search SQP for small dense nonlinear programs with inequality
//! constraints `c(z) >= 0` and nonnegativity bounds on selected variables.

mod catch;
pub mod qp;
mod reach;

pub use catch::{solve, CatchProblem, SqpSolution};
pub use reach::ReachProblem;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use qp::{QpError, QpSettings};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SqpError {
    #[error("problem evaluation failed: {0}")]
    Evaluation(String),
    #[error("invalid settings: {0}")]
    Settings(String),
    #[error("subproblem failed: {0}")]
    Subproblem(#[from] QpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SqpSettings {
    pub max_iterations: usize,
    pub constraint_tolerance: f64,
    /// Bound on the KKT stationarity residual, relative to `max(1, |grad f|)`.
    pub optimality_tolerance: f64,
    /// Initial l1 penalty; raised as multiplier estimates grow.
    pub merit_penalty: f64,
    /// Half-width of the box trust region on the step.
    pub trust_region_radius: f64,
    pub ls_backtrack_factor: f64,
    pub ls_max_steps: usize,
    /// Number of stages when no warm start is supplied.
    pub stages: usize,
}

impl Default for SqpSettings {
    fn default() -> Self {
        Self {
            max_iterations: 60,
            constraint_tolerance: 1e-6,
            optimality_tolerance: 1e-6,
            merit_penalty: 10.0,
            trust_region_radius: 1.0,
            ls_backtrack_factor: 0.5,
            ls_max_steps: 20,
            stages: 1,
        }
    }
}

impl SqpSettings {
    pub fn validate(&self) -> Result<(), SqpError> {
        let positive = [
            ("constraint_tolerance", self.constraint_tolerance),
            ("optimality_tolerance", self.optimality_tolerance),
            ("merit_penalty", self.merit_penalty),
            ("trust_region_radius", self.trust_region_radius),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(SqpError::Settings(format!("{name} must be positive")));
            }
        }
        if self.max_iterations == 0 || self.ls_max_steps == 0 || self.stages == 0 {
            return Err(SqpError::Settings("iteration counts must be positive".into()));
        }
        if !(self.ls_backtrack_factor > 0.0 && self.ls_backtrack_factor < 1.0) {
            return Err(SqpError::Settings("ls_backtrack_factor must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SqpStatus {
    Solved,
    MaxIterations,
    Infeasible,
}

/// Quadratic model of the problem at one iterate.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub objective: f64,
    pub gradient: DVector<f64>,
    /// Positive semidefinite approximation of the Lagrangian Hessian.
    pub hessian: DMatrix<f64>,
    pub constraints: DVector<f64>,
    pub jacobian: DMatrix<f64>,
}

pub trait NlpProblem {
    fn num_vars(&self) -> usize;
    fn num_constraints(&self) -> usize;
    /// Variables bounded below by zero.
    fn nonnegative(&self) -> &[usize];
    /// Objective and constraint values.
    fn values(&self, z: &DVector<f64>) -> Result<(f64, DVector<f64>), SqpError>;
    /// `multipliers` are the current constraint multiplier estimates, which
    /// the problem may use to add constraint curvature to the Hessian.
    fn linearize(&self, z: &DVector<f64>, multipliers: &DVector<f64>) -> Result<Linearization, SqpError>;
}

/// Record of one accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iteration: usize,
    pub penalty: f64,
    pub merit_before: f64,
    pub merit_after: f64,
    pub step_length: f64,
    pub restoration: bool,
}

#[derive(Debug, Clone)]
pub struct NlpSolution {
    pub z: DVector<f64>,
    pub status: SqpStatus,
    pub iterations: usize,
    pub objective: f64,
    pub max_violation: f64,
    pub stationarity: f64,
    pub multipliers: DVector<f64>,
    pub steps: Vec<StepRecord>,
}

/// Symmetric eigenvalue clipping so the matrix is positive definite with
/// smallest eigenvalue at least `floor`.
pub fn project_positive_definite(h: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = (h + h.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()
}

fn max_violation(c: &DVector<f64>) -> f64 {
    c.iter().fold(0.0, |acc, &v| acc.max(-v))
}

fn l1_violation(c: &DVector<f64>) -> f64 {
    c.iter().map(|&v| (-v).max(0.0)).sum()
}

/// Iterates the problem kept when the solve stops early: feasible points
/// beat infeasible ones, then lower objective or violation wins.
struct Best {
    z: DVector<f64>,
    objective: f64,
    violation: f64,
    stationarity: f64,
    multipliers: DVector<f64>,
}

impl Best {
    fn better(&self, objective: f64, violation: f64, tol: f64) -> bool {
        match (violation <= tol, self.violation <= tol) {
            (true, false) => true,
            (false, true) => false,
            (true, true) => objective < self.objective,
            (false, false) => violation < self.violation,
        }
    }
}

/// Step from the quadratic subproblem. `restoration` is set when the
/// linearized constraints had no solution inside the trust region and the
/// step instead reduces their violation.
#[derive(Debug, Clone)]
pub struct QpStep {
    pub step: DVector<f64>,
    pub multipliers: DVector<f64>,
    pub bound_multipliers: DVector<f64>,
    pub restoration: bool,
}

/// Minimize the quadratic model subject to the linearized constraints, the
/// nonnegativity bounds and the box trust region `|d_i| <= radius`.
pub fn qp_subproblem(lin: &Linearization, z: &DVector<f64>, nonneg: &[usize], radius: f64) -> Result<QpStep, SqpError> {
    subproblem(lin, z, nonneg, radius, &lin.constraints)
}

fn subproblem(
    lin: &Linearization,
    z: &DVector<f64>,
    nonneg: &[usize],
    radius: f64,
    offsets: &DVector<f64>,
) -> Result<QpStep, SqpError> {
    let n = z.len();
    let m = lin.constraints.len();
    let nb = nonneg.len();
    let settings = QpSettings::default();

    if radius == 0.0 {
        let violation = max_violation(offsets);
        if violation > 0.0 {
            return Err(QpError::Infeasible { row: 0, violation }.into());
        }
        return Ok(QpStep {
            step: DVector::zeros(n),
            multipliers: DVector::zeros(m),
            bound_multipliers: DVector::zeros(nb),
            restoration: false,
        });
    }

    let rows = m + nb + 2 * n;
    let mut a = DMatrix::zeros(rows, n);
    let mut b = DVector::zeros(rows);
    a.rows_mut(0, m).copy_from(&lin.jacobian);
    b.rows_mut(0, m).copy_from(offsets);
    for (k, &j) in nonneg.iter().enumerate() {
        a[(m + k, j)] = 1.0;
        b[m + k] = z[j];
    }
    for j in 0..n {
        a[(m + nb + 2 * j, j)] = -1.0;
        a[(m + nb + 2 * j + 1, j)] = 1.0;
        b[m + nb + 2 * j] = radius;
        b[m + nb + 2 * j + 1] = radius;
    }

    match qp::solve(&lin.hessian, &lin.gradient, &a, &b, &settings) {
        Ok(sol) => Ok(QpStep {
            step: sol.x,
            multipliers: sol.multipliers.rows(0, m).into_owned(),
            bound_multipliers: sol.multipliers.rows(m, nb).into_owned(),
            restoration: false,
        }),
        Err(QpError::Infeasible { .. }) | Err(QpError::IterationLimit) => {
            restoration_step(lin, &a, &b, n, m, nb)
        }
        Err(e) => Err(e.into()),
    }
}

/// Elastic subproblem: minimize the step in the Hessian metric plus a heavy
/// quadratic penalty on slacks that relax the linearized constraints. Bounds
/// and the trust region stay hard, and `d = 0, s = max(0, -c)` is feasible.
fn restoration_step(
    lin: &Linearization,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    n: usize,
    m: usize,
    nb: usize,
) -> Result<QpStep, SqpError> {
    let scale = lin.hessian.diagonal().amax().max(1.0);
    let rho = 1e3 * scale;
    let dim = n + m;
    let mut h = DMatrix::zeros(dim, dim);
    h.view_mut((0, 0), (n, n)).copy_from(&lin.hessian);
    for i in 0..m {
        h[(n + i, n + i)] = rho;
    }
    let g = DVector::zeros(dim);
    let mut ae = DMatrix::zeros(a.nrows(), dim);
    ae.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
    for i in 0..m {
        ae[(i, n + i)] = 1.0;
    }
    let sol = qp::solve(&h, &g, &ae, b, &QpSettings::default())?;
    Ok(QpStep {
        step: sol.x.rows(0, n).into_owned(),
        multipliers: sol.multipliers.rows(0, m).into_owned(),
        bound_multipliers: sol.multipliers.rows(m, nb).into_owned(),
        restoration: true,
    })
}

const ARMIJO: f64 = 1e-4;
/// Consecutive restoration iterations without 1% progress before giving up.
const RESTORATION_PATIENCE: usize = 4;

pub fn solve_nlp(problem: &dyn NlpProblem, z0: &DVector<f64>, settings: &SqpSettings) -> Result<NlpSolution, SqpError> {
    settings.validate()?;
    let m = problem.num_constraints();
    let nonneg = problem.nonnegative().to_vec();
    let mut z = z0.clone();
    for &j in &nonneg {
        z[j] = z[j].max(0.0);
    }
    let tol_c = settings.constraint_tolerance;

    let mut multipliers = DVector::zeros(m);
    let mut penalty = settings.merit_penalty;
    let mut steps = Vec::new();
    let mut best: Option<Best> = None;
    let mut stalled_restorations = 0;
    let mut iterations = 0;

    for iteration in 1..=settings.max_iterations {
        iterations = iteration;
        let lin = problem.linearize(&z, &multipliers)?;
        let violation = max_violation(&lin.constraints);
        let sub = match subproblem(&lin, &z, &nonneg, settings.trust_region_radius, &lin.constraints) {
            Ok(sub) => sub,
            Err(SqpError::Subproblem(e)) => {
                log::debug!("subproblem failed at iteration {iteration}: {e}");
                let fallback = Best {
                    z: z.clone(),
                    objective: lin.objective,
                    violation,
                    stationarity: f64::NAN,
                    multipliers: multipliers.clone(),
                };
                let best = match best {
                    Some(b) if !b.better(lin.objective, violation, tol_c) => b,
                    _ => fallback,
                };
                let status = if best.violation <= tol_c { SqpStatus::MaxIterations } else { SqpStatus::Infeasible };
                return Ok(NlpSolution { status, ..infeasible(best, iteration, steps) });
            }
            Err(e) => return Err(e),
        };

        let mut residual = lin.gradient.clone() - lin.jacobian.transpose() * &sub.multipliers;
        for (k, &j) in nonneg.iter().enumerate() {
            residual[j] -= sub.bound_multipliers[k];
        }
        let stationarity = residual.amax() / lin.gradient.amax().max(1.0);

        if best.as_ref().is_none_or(|b| b.better(lin.objective, violation, tol_c)) {
            best = Some(Best {
                z: z.clone(),
                objective: lin.objective,
                violation,
                stationarity,
                multipliers: sub.multipliers.clone(),
            });
        }
        if violation <= tol_c && !sub.restoration && stationarity <= settings.optimality_tolerance {
            return Ok(NlpSolution {
                z,
                status: SqpStatus::Solved,
                iterations: iteration,
                objective: lin.objective,
                max_violation: violation,
                stationarity,
                multipliers: sub.multipliers,
                steps,
            });
        }

        let d = &sub.step;
        let viol_l1 = l1_violation(&lin.constraints);
        let linear_viol = l1_violation(&(&lin.constraints + &lin.jacobian * d));
        let predicted_reduction = viol_l1 - linear_viol;
        if sub.restoration && predicted_reduction <= 1e-10 * viol_l1.max(1.0) {
            return Ok(infeasible(best.unwrap(), iteration, steps));
        }

        let slope_f = lin.gradient.dot(d);
        penalty = penalty.max(1.5 * sub.multipliers.amax());
        if predicted_reduction > 0.0 && slope_f > 0.0 {
            penalty = penalty.max(2.0 * slope_f / predicted_reduction);
        }
        let merit_before = lin.objective + penalty * viol_l1;
        let slope = slope_f - penalty * predicted_reduction;

        let mut accepted = None;
        let mut alpha = 1.0;
        for _ in 0..settings.ls_max_steps {
            let trial = &z + d * alpha;
            let (f, c) = problem.values(&trial)?;
            let merit = f + penalty * l1_violation(&c);
            if merit.is_finite() && merit <= merit_before + ARMIJO * alpha * slope.min(0.0) {
                accepted = Some((trial, merit, alpha));
                break;
            }
            if alpha == 1.0 && !sub.restoration {
                // Second-order correction against constraint curvature.
                let corrected_offsets = &c - &lin.jacobian * d;
                if let Ok(soc) = subproblem(&lin, &z, &nonneg, settings.trust_region_radius, &corrected_offsets) {
                    let trial = &z + &soc.step;
                    let (f, c) = problem.values(&trial)?;
                    let merit = f + penalty * l1_violation(&c);
                    if merit.is_finite() && merit <= merit_before + ARMIJO * slope.min(0.0) {
                        accepted = Some((trial, merit, 1.0));
                        break;
                    }
                }
            }
            alpha *= settings.ls_backtrack_factor;
        }

        let Some((trial, merit_after, step_length)) = accepted else {
            // No acceptable step along the search direction.
            if sub.restoration {
                return Ok(infeasible(best.unwrap(), iteration, steps));
            }
            break;
        };
        for &j in &nonneg {
            debug_assert!(trial[j] >= -1e-12);
        }
        z = trial;
        for &j in &nonneg {
            z[j] = z[j].max(0.0);
        }
        multipliers = sub.multipliers.clone();
        steps.push(StepRecord { iteration, penalty, merit_before, merit_after, step_length, restoration: sub.restoration });

        if sub.restoration {
            let (_, c) = problem.values(&z)?;
            if l1_violation(&c) > 0.99 * viol_l1 {
                stalled_restorations += 1;
                if stalled_restorations >= RESTORATION_PATIENCE {
                    return Ok(infeasible(best.unwrap(), iteration, steps));
                }
            } else {
                stalled_restorations = 0;
            }
        } else {
            stalled_restorations = 0;
        }
    }

    // Final iterate may never have been linearized; compare it too.
    let (f, c) = problem.values(&z)?;
    let violation = max_violation(&c);
    let mut best = best.unwrap();
    if best.better(f, violation, tol_c) {
        best = Best { z: z.clone(), objective: f, violation, stationarity: f64::NAN, multipliers };
    }
    Ok(NlpSolution {
        z: best.z,
        status: SqpStatus::MaxIterations,
        iterations,
        objective: best.objective,
        max_violation: best.violation,
        stationarity: best.stationarity,
        multipliers: best.multipliers,
        steps,
    })
}

fn infeasible(best: Best, iteration: usize, steps: Vec<StepRecord>) -> NlpSolution {
    NlpSolution {
        z: best.z,
        status: SqpStatus::Infeasible,
        iterations: iteration,
        objective: best.objective,
        max_violation: best.violation,
        stationarity: best.stationarity,
        multipliers: best.multipliers,
        steps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_trust_region_gives_zero_step() {
        let problem = ReachProblem::new(1.0);
        let z = DVector::from_row_slice(&[0.5, 1.0]);
        let lin = problem.linearize(&z, &DVector::zeros(6)).unwrap();
        let step = qp_subproblem(&lin, &z, problem.nonnegative(), 0.0).unwrap();
        assert_eq!(step.step, DVector::zeros(2));
    }

    #[test]
    fn settings_validation() {
        assert!(SqpSettings::default().validate().is_ok());
        assert!(SqpSettings { ls_backtrack_factor: 1.0, ..Default::default() }.validate().is_err());
        assert!(SqpSettings { trust_region_radius: 0.0, ..Default::default() }.validate().is_err());
    }
}
