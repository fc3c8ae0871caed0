//! Open-loop cradling after the intercept: slow the net down along its
//! normal while rotating the opening to face up, so the ball settles instead
//! of bouncing out.

use std::f64::consts::PI;

use nalgebra::{SMatrix, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::kinematics::{JointVector, KinematicModel, DOF};
use crate::stage_ocp::Limits;

/// Additive damping on `J J'` in the Jacobian inverse.
pub const JACOBIAN_DAMPING: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CradleParams {
    /// Slow-down time.
    pub t_s: f64,
    pub k_v: f64,
    pub k_omega: f64,
    /// Head speed along the net normal at the intercept.
    pub v_c: f64,
    pub control_dt: f64,
}

impl Default for CradleParams {
    fn default() -> Self {
        Self { t_s: 0.3, k_v: 20.0, k_omega: 20.0, v_c: 1.0, control_dt: 1.0 / 75.0 }
    }
}

impl CradleParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("t_s", self.t_s), ("k_v", self.k_v), ("k_omega", self.k_omega), ("v_c", self.v_c), ("control_dt", self.control_dt)] {
            if !(v > 0.0) {
                return Err(format!("cradle {name} must be positive"));
            }
        }
        Ok(())
    }

    /// Time after the intercept at which the cradle is considered finished.
    pub fn duration(&self) -> f64 {
        2.0 * self.t_s
    }
}

/// Desired head twist `(v_d, omega_d)` at time `t >= t_f`.
pub fn desired_twist(q: &JointVector, t: f64, t_f: f64, params: &CradleParams, model: &KinematicModel) -> (Vector3<f64>, Vector3<f64>) {
    let nu = ((t - t_f) / params.t_s).clamp(0.0, 1.0);
    let y_hat = model.fk(q).net_normal();
    let v_d = y_hat * (params.v_c * (1.0 - nu) * (PI * nu).cos());
    let omega_d = -(y_hat.cross(&Vector3::z())) * PI;
    (v_d, omega_d)
}

/// Joint accelerations for one control period.
pub fn cradle_step(
    q: &JointVector,
    qd: &JointVector,
    t: f64,
    t_f: f64,
    params: &CradleParams,
    limits: &Limits,
    model: &KinematicModel,
) -> JointVector {
    let jac = model.jacobian(q);
    let twist: Vector6<f64> = jac * qd;
    let (v_d, omega_d) = desired_twist(q, t, t_f, params, model);
    let dt = params.control_dt;
    let mut delta = Vector6::zeros();
    for a in 0..3 {
        delta[a] = dt * params.k_v * (v_d[a] - twist[a]);
        delta[3 + a] = dt * params.k_omega * (omega_d[a] - twist[3 + a]);
    }
    let dqd = damped_inverse(&jac, &delta);
    let u = dqd / dt;
    u.zip_map(&limits.accel, |u, a| u.clamp(-a, a))
}

/// `J' (J J' + damping I)^-1 x`.
pub fn damped_inverse(jac: &SMatrix<f64, 6, DOF>, x: &Vector6<f64>) -> JointVector {
    let mut jjt = jac * jac.transpose();
    for i in 0..6 {
        jjt[(i, i)] += JACOBIAN_DAMPING;
    }
    let y = jjt.cholesky().expect("damped J J' is positive definite").solve(x);
    jac.transpose() * y
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CradleSample {
    pub t: f64,
    pub q: JointVector,
    pub qd: JointVector,
    /// Acceleration applied over the following period.
    pub u: JointVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CradleTrajectory {
    pub samples: Vec<CradleSample>,
    /// Number of steps in which a joint position was clamped to its box.
    pub limit_clamps: usize,
}

impl CradleTrajectory {
    pub fn last(&self) -> &CradleSample {
        self.samples.last().expect("trajectory holds the initial state")
    }
}

/// Zero-order-hold rollout of the cradle from the intercept state.
pub fn simulate_cradle(
    q0: &JointVector,
    qd0: &JointVector,
    t_f: f64,
    duration: f64,
    params: &CradleParams,
    limits: &Limits,
    model: &KinematicModel,
) -> CradleTrajectory {
    let dt = params.control_dt;
    let steps = (duration / dt - 1e-9).ceil().max(0.0) as usize;
    let mut q = *q0;
    let mut qd = *qd0;
    let mut samples = Vec::with_capacity(steps + 1);
    let mut limit_clamps = 0;
    for k in 0..steps {
        let t = t_f + k as f64 * dt;
        let u = cradle_step(&q, &qd, t, t_f, params, limits, model);
        samples.push(CradleSample { t, q, qd, u });
        q += qd * dt + u * (0.5 * dt * dt);
        qd += u * dt;
        let clamped = q.zip_zip_map(&limits.q_lo, &limits.q_hi, |v, lo, hi| v.clamp(lo, hi));
        if clamped != q {
            limit_clamps += 1;
            log::debug!("cradle clamped joint positions at t = {t:.3}");
            q = clamped;
        }
    }
    samples.push(CradleSample { t: t_f + steps as f64 * dt, q, qd, u: JointVector::zeros() });
    CradleTrajectory { samples, limit_clamps }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{JointKind, JointSpec};
    use approx::assert_abs_diff_eq;

    #[test]
    fn twist_endpoints() {
        let model = KinematicModel::default();
        let q = JointVector::zeros();
        let p = CradleParams::default();
        let y = model.fk(&q).net_normal();
        let (v0, _) = desired_twist(&q, 1.0, 1.0, &p, &model);
        assert_abs_diff_eq!(v0, y * p.v_c, epsilon = 1e-15);
        let (v1, _) = desired_twist(&q, 1.0 + p.t_s, 1.0, &p, &model);
        assert_eq!(v1, Vector3::zeros());
        let (v2, _) = desired_twist(&q, 5.0, 1.0, &p, &model);
        assert_eq!(v2, Vector3::zeros());
    }

    #[test]
    fn twist_bounds() {
        let model = KinematicModel::default();
        let p = CradleParams::default();
        let q = JointVector::from_row_slice(&[0.1, 0.3, -0.4, 0.6, 0.2, -0.7, 0.5]);
        for i in 0..=100 {
            let t = i as f64 * 0.01;
            let (v, w) = desired_twist(&q, t, 0.0, &p, &model);
            assert!(v.norm() <= p.v_c + 1e-15);
            assert!(w.norm() <= PI + 1e-12);
        }
    }

    /// Prismatic joint along y and six revolute joints about x through the
    /// head, so the linear and angular parts decouple.
    fn decoupled_model() -> KinematicModel {
        let mut joints = vec![JointSpec { kind: JointKind::Prismatic, origin: [0.0; 3], axis: [0.0, 1.0, 0.0] }];
        joints.extend((1..DOF).map(|_| JointSpec { kind: JointKind::Revolute, origin: [0.0; 3], axis: [1.0, 0.0, 0.0] }));
        KinematicModel { joints, tool_offset: [0.0; 3] }
    }

    #[test]
    fn upright_net_needs_no_rotation() {
        // Pitch the whole chain a quarter turn so the normal points up.
        let model = decoupled_model();
        let mut q = JointVector::zeros();
        q[1] = PI / 2.0;
        assert_abs_diff_eq!(model.fk(&q).net_normal(), Vector3::z(), epsilon = 1e-15);
        let (_, w) = desired_twist(&q, 0.0, 0.0, &CradleParams::default(), &model);
        assert_abs_diff_eq!(w, Vector3::zeros(), epsilon = 1e-15);
    }

    #[test]
    fn at_desired_twist_gives_zero_command() {
        let model = decoupled_model();
        let p = CradleParams::default();
        let limits = Limits::default();
        let q = JointVector::zeros();
        // v_d = v_c e_y along the prismatic joint, omega_d = -pi e_x shared by
        // the six revolute joints.
        let mut qd = JointVector::repeat(-PI / 6.0);
        qd[0] = p.v_c;
        let u = cradle_step(&q, &qd, 0.0, 0.0, &p, &limits, &model);
        assert_abs_diff_eq!(u, JointVector::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn single_prismatic_matches_scalar_law() {
        let model = decoupled_model();
        let p = CradleParams { v_c: 0.4, ..Default::default() };
        let limits = Limits { accel: JointVector::repeat(1e3), ..Limits::default() };
        let mut qd = JointVector::repeat(-PI / 6.0);
        qd[0] = 0.1;
        let u = cradle_step(&JointVector::zeros(), &qd, 0.0, 0.0, &p, &limits, &model);
        // One column of unit norm: J'(JJ' + d)^-1 = 1 / (1 + d).
        let expected = p.k_v * (p.v_c - 0.1) / (1.0 + JACOBIAN_DAMPING);
        assert_abs_diff_eq!(u[0], expected, epsilon = 1e-8);
    }

    #[test]
    fn saturates_exactly_at_limits() {
        let model = KinematicModel::default();
        let limits = Limits::default();
        let p = CradleParams::default();
        let qd = JointVector::from_row_slice(&[1.5, -3.0, 3.0, -3.0, 3.0, -3.0, 3.0]);
        let u = cradle_step(&JointVector::zeros(), &qd, 0.0, 0.0, &p, &limits, &model);
        let free = damped_inverse(
            &model.jacobian(&JointVector::zeros()),
            &{
                let jac = model.jacobian(&JointVector::zeros());
                let twist = jac * qd;
                let (v_d, w_d) = desired_twist(&JointVector::zeros(), 0.0, 0.0, &p, &model);
                let mut d = Vector6::zeros();
                for a in 0..3 {
                    d[a] = p.control_dt * p.k_v * (v_d[a] - twist[a]);
                    d[3 + a] = p.control_dt * p.k_omega * (w_d[a] - twist[3 + a]);
                }
                d
            },
        ) / p.control_dt;
        let mut saturated = 0;
        for i in 0..DOF {
            if free[i].abs() > limits.accel[i] {
                assert_eq!(u[i], limits.accel[i] * free[i].signum());
                saturated += 1;
            } else {
                assert_eq!(u[i], free[i]);
            }
        }
        assert!(saturated > 0);
    }

    #[test]
    fn settles_and_faces_up() {
        let model = KinematicModel::default();
        let limits = Limits::default();
        let p = CradleParams::default();
        let q0 = JointVector::zeros();
        // Intercept state: head moving along its normal at v_c.
        let jac = model.jacobian(&q0);
        let mut target = Vector6::zeros();
        target[1] = p.v_c;
        let qd0 = damped_inverse(&jac, &target);
        let traj = simulate_cradle(&q0, &qd0, 0.7, p.duration(), &p, &limits, &model);
        let last = traj.last();
        let (v, _) = model.head_velocity(&last.q, &last.qd);
        assert!(v.norm() < 0.05, "head speed {}", v.norm());
        let opening = -model.fk(&last.q).net_normal();
        assert!(opening.z > 0.95, "opening {opening:?}");
        for s in &traj.samples {
            for i in 0..DOF {
                assert!(s.u[i].abs() <= limits.accel[i]);
            }
        }
    }

    #[test]
    fn at_rest_without_target_speed_stays_put() {
        let model = KinematicModel::default();
        let limits = Limits::default();
        let p = CradleParams { v_c: 0.0, ..Default::default() };
        // Wrist pitched so the opening already faces up: nothing to track.
        let mut q0 = JointVector::zeros();
        q0[5] = -PI / 2.0;
        assert_abs_diff_eq!(model.fk(&q0).net_normal(), -Vector3::z(), epsilon = 1e-15);
        let traj = simulate_cradle(&q0, &JointVector::zeros(), 0.0, p.duration(), &p, &limits, &model);
        let moved = (model.fk(&traj.last().q).p - model.fk(&q0).p).norm();
        assert!(moved < 1e-3, "moved {moved}");
    }
}
