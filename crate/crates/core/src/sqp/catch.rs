//! The catching problem as a dense NLP over the flattened stage controls.
//!
//! Constraint rows, all `>= 0`:
//! 1. acceleration: `a_i dt -/+ dqd_i` per stage and joint,
//! 2. velocity box at nodes `1..=N` (upper, lower per joint),
//! 3. position box at nodes `1..=N`,
//! 4. extremum: two rows per stage and joint on the in-stage turning point
//!    when the joint reverses, otherwise on the stage end position,
//! 5. endpoint: position capture radius and net alignment.
//!
//! Node 0 is fixed by the initial state and contributes no rows. The fixed
//! row count keeps multipliers aligned across warm starts.

use nalgebra::{DMatrix, DVector, Matrix3, RowDVector, Vector3};
use serde::{Deserialize, Serialize};

use super::{solve_nlp, Linearization, NlpProblem, SqpError, SqpSettings, SqpStatus, StepRecord};
use crate::kinematics::{KinematicModel, DOF};
use crate::stage_ocp::{
    controls_from_slice, controls_to_vec, rollout_with_sensitivities, CatchSpec, Limits, StageControl, StageState,
    VARS_PER_STAGE,
};

const HESSIAN_REGULARIZATION: f64 = 1e-6;

pub struct CatchProblem<'a> {
    pub x0: StageState,
    pub spec: &'a CatchSpec,
    pub limits: &'a Limits,
    pub model: &'a KinematicModel,
    stages: usize,
    nonneg: Vec<usize>,
}

struct Derivatives {
    gradient: DVector<f64>,
    hessian: DMatrix<f64>,
    jacobian: DMatrix<f64>,
}

impl<'a> CatchProblem<'a> {
    pub fn new(x0: StageState, spec: &'a CatchSpec, limits: &'a Limits, model: &'a KinematicModel, stages: usize) -> Self {
        let nonneg = (0..stages).map(|k| k * VARS_PER_STAGE + DOF).collect();
        Self { x0, spec, limits, model, stages, nonneg }
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn rows_per_block(&self) -> usize {
        2 * DOF * self.stages
    }

    #[allow(clippy::needless_range_loop)]
    fn assemble(
        &self,
        z: &DVector<f64>,
        multipliers: Option<&DVector<f64>>,
    ) -> Result<(f64, DVector<f64>, Option<Derivatives>), SqpError> {
        let want = multipliers.is_some();
        let n = z.len();
        let m = self.num_constraints();
        let lim = self.limits;
        let spec = self.spec;
        let controls = controls_from_slice(z.as_slice());
        let sens = rollout_with_sensitivities(&self.x0, &controls, lim);
        let nodes = &sens.nodes;

        let mut c = DVector::zeros(m);
        let mut jac = if want { DMatrix::zeros(m, n) } else { DMatrix::zeros(0, 0) };
        let mut row = 0;
        let mut put = |row: &mut usize, value: f64, grad: Option<RowDVector<f64>>, jac: &mut DMatrix<f64>| {
            c[*row] = value;
            if let Some(g) = grad {
                jac.set_row(*row, &g);
            }
            *row += 1;
        };

        for (k, u) in controls.iter().enumerate() {
            let col_t = k * VARS_PER_STAGE + DOF;
            for i in 0..DOF {
                let col = k * VARS_PER_STAGE + i;
                for sign in [-1.0, 1.0] {
                    let grad = want.then(|| {
                        let mut g = RowDVector::zeros(n);
                        g[col_t] = lim.accel[i];
                        g[col] = sign;
                        g
                    });
                    put(&mut row, lim.accel[i] * u.dt + sign * u.dqd[i], grad, &mut jac);
                }
            }
        }
        for k in 1..=self.stages {
            for i in 0..DOF {
                let g = want.then(|| sens.dqd[k].row(i).into_owned());
                put(&mut row, lim.qd_hi[i] - nodes[k].qd[i], g.as_ref().map(|g| -g), &mut jac);
                put(&mut row, nodes[k].qd[i] - lim.qd_lo[i], g, &mut jac);
            }
        }
        for k in 1..=self.stages {
            for i in 0..DOF {
                let g = want.then(|| sens.dq[k].row(i).into_owned());
                put(&mut row, lim.q_hi[i] - nodes[k].q[i], g.as_ref().map(|g| -g), &mut jac);
                put(&mut row, nodes[k].q[i] - lim.q_lo[i], g, &mut jac);
            }
        }
        for (k, u) in controls.iter().enumerate() {
            for i in 0..DOF {
                let v = nodes[k].qd[i];
                let (value, g) = if v * (v + u.dqd[i]) < 0.0 {
                    let value = nodes[k].q[i] + v.signum() * v * v / (2.0 * lim.accel[i]);
                    let g = want.then(|| sens.dq[k].row(i) + sens.dqd[k].row(i) * (v.abs() / lim.accel[i]));
                    (value, g)
                } else {
                    (nodes[k + 1].q[i], want.then(|| sens.dq[k + 1].row(i).into_owned()))
                };
                put(&mut row, lim.q_hi[i] - value, g.as_ref().map(|g| -g), &mut jac);
                put(&mut row, value - lim.q_lo[i], g, &mut jac);
            }
        }

        // Terminal quantities.
        let xn = nodes[self.stages];
        let (p_ball, v_ball) = spec.flight.predict(&spec.ball, xn.t);
        let speed = v_ball.norm();
        if speed < 1e-6 {
            return Err(SqpError::Evaluation(format!("ball speed {speed} too small at t = {}", xn.t)));
        }
        let v_hat = v_ball / speed;
        let state = self.model.chain_state(&xn.q);
        let jk = self.model.jacobian_from_state(&state);
        let jv = jk.fixed_rows::<3>(0).into_owned();
        let r = state.pose.r;
        let y_hat: Vector3<f64> = r.column(1).into_owned();
        let e_p = state.pose.p - p_ball;
        let v_head = jv * xn.qd;
        let e_v = r.transpose() * v_head - Vector3::new(0.0, spec.v_c, 0.0);

        let eps_p = spec.eps_p;
        put(&mut row, (eps_p * eps_p - e_p.norm_squared()) / (2.0 * eps_p), None, &mut jac);
        put(&mut row, y_hat.dot(&v_hat) - spec.eps_r.cos(), None, &mut jac);
        debug_assert_eq!(row, m);

        let running: f64 = controls.iter().map(|u| spec.lambda * u.dt + u.dqd.norm_squared()).sum();
        let sqrt_p = spec.w_p.sqrt();
        let sqrt_a = (spec.w_p / 2.0).sqrt();
        let sqrt_v = spec.w_v.sqrt();
        let diff = y_hat - v_hat;
        let terminal = (sqrt_p * e_p).norm_squared() + (sqrt_a * diff).norm_squared() + (sqrt_v * e_v).norm_squared();
        let objective = running + terminal;
        let Some(multipliers) = multipliers else {
            return Ok((objective, c, None));
        };

        // Sensitivities of the final node.
        let dq = &sens.dq[self.stages];
        let dqd = &sens.dqd[self.stages];
        let dt = sens.dt[self.stages].transpose();

        let j_ep = jv * dq - DMatrix::from_column_slice(3, 1, v_ball.as_slice()) * &dt;
        let mut jy_q = DMatrix::zeros(3, DOF);
        let mut ev_q = DMatrix::zeros(3, DOF);
        for j in 0..DOF {
            let omega = Vector3::new(jk[(3, j)], jk[(4, j)], jk[(5, j)]);
            jy_q.set_column(j, &omega.cross(&y_hat));
            let djv = self.model.linear_jacobian_derivative(&state, &jk, j);
            let col = r.transpose() * (v_head.cross(&omega) + djv * xn.qd);
            ev_q.set_column(j, &col);
        }
        let j_y = &jy_q * dq;
        let g = spec.flight.gravity_vector();
        let dvhat_dt = (Matrix3::identity() - v_hat * v_hat.transpose()) * g / speed;
        let j_vh = DMatrix::from_column_slice(3, 1, dvhat_dt.as_slice()) * &dt;
        let rt_jv = DMatrix::from_iterator(3, DOF, (r.transpose() * jv).iter().copied());
        let j_ev = ev_q * dq + rt_jv * dqd;
        let j_diff = &j_y - &j_vh;

        let mut resid = DVector::zeros(9);
        let mut j_r = DMatrix::zeros(9, n);
        for a in 0..3 {
            resid[a] = sqrt_p * e_p[a];
            resid[3 + a] = sqrt_a * diff[a];
            resid[6 + a] = sqrt_v * e_v[a];
        }
        j_r.rows_mut(0, 3).copy_from(&(&j_ep * sqrt_p));
        j_r.rows_mut(3, 3).copy_from(&(&j_diff * sqrt_a));
        j_r.rows_mut(6, 3).copy_from(&(&j_ev * sqrt_v));

        let mut gradient = j_r.transpose() * &resid * 2.0;
        let mut hessian = j_r.transpose() * &j_r * 2.0;
        for (k, u) in controls.iter().enumerate() {
            gradient[k * VARS_PER_STAGE + DOF] += spec.lambda;
            for i in 0..DOF {
                let col = k * VARS_PER_STAGE + i;
                gradient[col] += 2.0 * u.dqd[i];
                hessian[(col, col)] += 2.0;
            }
        }

        let e_row = m - 2;
        let grad_pos = -(e_p.transpose() * &j_ep) / eps_p;
        jac.set_row(e_row, &grad_pos);
        let grad_align = v_hat.transpose() * &j_y + y_hat.transpose() * &j_vh;
        jac.set_row(e_row + 1, &grad_align);

        // Gauss-Newton curvature of the endpoint rows, weighted by their
        // multiplier estimates.
        let mu_p = multipliers.get(e_row).copied().unwrap_or(0.0).max(0.0);
        let mu_a = multipliers.get(e_row + 1).copied().unwrap_or(0.0).max(0.0);
        if mu_p > 0.0 {
            hessian += j_ep.transpose() * &j_ep * (mu_p / eps_p);
        }
        if mu_a > 0.0 {
            hessian += j_diff.transpose() * &j_diff * mu_a;
        }
        let reg = HESSIAN_REGULARIZATION * (1.0 + hessian.diagonal().amax());
        for i in 0..n {
            hessian[(i, i)] += reg;
        }

        Ok((objective, c, Some(Derivatives { gradient, hessian, jacobian: jac })))
    }
}

impl NlpProblem for CatchProblem<'_> {
    fn num_vars(&self) -> usize {
        self.stages * VARS_PER_STAGE
    }

    fn num_constraints(&self) -> usize {
        4 * self.rows_per_block() + 2
    }

    fn nonnegative(&self) -> &[usize] {
        &self.nonneg
    }

    fn values(&self, z: &DVector<f64>) -> Result<(f64, DVector<f64>), SqpError> {
        let (f, c, _) = self.assemble(z, None)?;
        Ok((f, c))
    }

    fn linearize(&self, z: &DVector<f64>, multipliers: &DVector<f64>) -> Result<Linearization, SqpError> {
        let (objective, constraints, d) = self.assemble(z, Some(multipliers))?;
        let d = d.expect("derivatives requested");
        Ok(Linearization { objective, gradient: d.gradient, hessian: d.hessian, constraints, jacobian: d.jacobian })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqpSolution {
    pub controls: Vec<StageControl>,
    pub status: SqpStatus,
    pub iterations: usize,
    pub final_constraint_violation: f64,
    pub objective_value: f64,
    pub stationarity: f64,
    pub steps: Vec<StepRecord>,
}

/// Default initial guess: no velocity change, total duration split evenly up
/// to the time the ball reaches the head's current y plane.
pub fn initial_guess(x0: &StageState, spec: &CatchSpec, model: &KinematicModel, stages: usize) -> Vec<StageControl> {
    let head_y = model.fk(&x0.q).p.y;
    let t_plane = spec
        .flight
        .time_at_plane(&spec.ball, head_y)
        .map(|t| t - x0.t)
        .unwrap_or(0.5);
    let dt = t_plane.max(0.05) / stages as f64;
    vec![StageControl { dqd: Default::default(), dt }; stages]
}

pub fn solve(
    x0: &StageState,
    spec: &CatchSpec,
    limits: &Limits,
    model: &KinematicModel,
    warm_start: Option<&[StageControl]>,
    settings: &SqpSettings,
) -> Result<SqpSolution, SqpError> {
    if !(spec.eps_p > 0.0) {
        return Err(SqpError::Settings("eps_p must be positive".into()));
    }
    let initial = match warm_start {
        Some(w) if !w.is_empty() => w.to_vec(),
        _ => initial_guess(x0, spec, model, settings.stages.max(1)),
    };
    let problem = CatchProblem::new(*x0, spec, limits, model, initial.len());
    let z0 = DVector::from_vec(controls_to_vec(&initial));
    let sol = solve_nlp(&problem, &z0, settings)?;
    let mut controls = controls_from_slice(sol.z.as_slice());
    for u in &mut controls {
        u.dt = u.dt.max(0.0);
    }
    Ok(SqpSolution {
        controls,
        status: sol.status,
        iterations: sol.iterations,
        final_constraint_violation: sol.max_violation,
        objective_value: sol.objective,
        stationarity: sol.stationarity,
        steps: sol.steps,
    })
}
