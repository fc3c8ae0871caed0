//! The N-stage catching problem. Each stage is a constant-acceleration phase
//! at the joint's limit followed by a cruise phase; the decision variables
//! per stage are the velocity change and the stage duration.
//!
//! Constraint residuals are always arranged `>= 0` feasible.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ballistics::{BallParams, FlightModel};
use crate::kinematics::{JointVector, KinematicModel, DOF};

/// Decision variables per stage: `DOF` velocity changes plus the duration.
pub const VARS_PER_STAGE: usize = DOF + 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OcpError {
    #[error("predicted ball speed {0} m/s is too small to define a direction")]
    DegenerateVelocity(f64),
    #[error("query time {tau} s is beyond the plan horizon {horizon} s")]
    OutOfHorizon { tau: f64, horizon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageState {
    pub q: JointVector,
    pub qd: JointVector,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageControl {
    pub dqd: JointVector,
    pub dt: f64,
}

impl StageControl {
    pub fn zero() -> Self {
        Self { dqd: JointVector::zeros(), dt: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    /// Symmetric acceleration bound per joint.
    pub accel: JointVector,
    pub q_lo: JointVector,
    pub q_hi: JointVector,
    pub qd_lo: JointVector,
    pub qd_hi: JointVector,
}

impl Default for Limits {
    fn default() -> Self {
        let a = [10.0, 25.0, 25.0, 25.0, 25.0, 25.0, 25.0];
        let q = [1.35, 2.8, 1.9, 2.2, 2.8, 2.0, 3.0];
        let v = [2.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0];
        Self {
            accel: JointVector::from_row_slice(&a),
            q_lo: -JointVector::from_row_slice(&q),
            q_hi: JointVector::from_row_slice(&q),
            qd_lo: -JointVector::from_row_slice(&v),
            qd_hi: JointVector::from_row_slice(&v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid limits: {0}")]
pub struct LimitsError(pub String);

impl Limits {
    pub fn validate(&self) -> Result<(), LimitsError> {
        for i in 0..DOF {
            if !(self.accel[i] > 0.0) {
                return Err(LimitsError(format!("accel[{i}] must be positive")));
            }
            if !(self.q_lo[i] < self.q_hi[i]) {
                return Err(LimitsError(format!("q_lo[{i}] must be below q_hi[{i}]")));
            }
            if !(self.qd_lo[i] < 0.0 && 0.0 < self.qd_hi[i]) {
                return Err(LimitsError(format!("velocity box for joint {i} must straddle zero")));
            }
        }
        Ok(())
    }

    pub fn clamp_velocity(&self, qd: &JointVector) -> JointVector {
        qd.zip_zip_map(&self.qd_lo, &self.qd_hi, |v, lo, hi| v.clamp(lo, hi))
    }
}

/// Problem parameters of the catching objective and endpoint constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatchSpec {
    pub ball: BallParams,
    pub flight: FlightModel,
    pub eps_p: f64,
    pub eps_r: f64,
    pub v_c: f64,
    pub w_p: f64,
    pub w_v: f64,
    pub lambda: f64,
}

/// The tunable part of [`CatchSpec`], as stored in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CatchWeights {
    pub eps_p: f64,
    pub eps_r: f64,
    pub v_c: f64,
    pub w_p: f64,
    pub w_v: f64,
    pub lambda: f64,
}

impl Default for CatchWeights {
    fn default() -> Self {
        Self { eps_p: 0.05, eps_r: 0.35, v_c: 1.0, w_p: 10.0, w_v: 1.0, lambda: 10.0 }
    }
}

impl CatchWeights {
    pub fn spec(&self, ball: BallParams, flight: FlightModel) -> CatchSpec {
        CatchSpec {
            ball,
            flight,
            eps_p: self.eps_p,
            eps_r: self.eps_r,
            v_c: self.v_c,
            w_p: self.w_p,
            w_v: self.w_v,
            lambda: self.lambda,
        }
    }
}

/// One stage of the piecewise accel/cruise profile.
pub fn stage_transition(x: &StageState, u: &StageControl, limits: &Limits) -> StageState {
    let bang = u.dqd.zip_map(&u.dqd, |a, b| a * b.abs()).component_div(&limits.accel);
    StageState {
        q: x.q + (x.qd + u.dqd) * u.dt - bang * 0.5,
        qd: x.qd + u.dqd,
        t: x.t + u.dt,
    }
}

/// States at every stage node, `x[0] = x0` through `x[N]`.
pub fn rollout(x0: &StageState, controls: &[StageControl], limits: &Limits) -> Vec<StageState> {
    let mut nodes = Vec::with_capacity(controls.len() + 1);
    nodes.push(*x0);
    for u in controls {
        let next = stage_transition(nodes.last().unwrap(), u, limits);
        nodes.push(next);
    }
    nodes
}

pub fn horizon(controls: &[StageControl]) -> f64 {
    controls.iter().map(|u| u.dt).sum()
}

/// Continuous-time joint position and velocity at `tau` seconds after `x0.t`.
pub fn decode(
    x0: &StageState,
    controls: &[StageControl],
    tau: f64,
    limits: &Limits,
) -> Result<(JointVector, JointVector), OcpError> {
    let total = horizon(controls);
    if tau > total {
        return Err(OcpError::OutOfHorizon { tau, horizon: total });
    }
    let mut x = *x0;
    let mut remaining = tau.max(0.0);
    for (k, u) in controls.iter().enumerate() {
        let last = k + 1 == controls.len();
        if remaining < u.dt || last {
            return Ok(within_stage(&x, u, remaining.min(u.dt), limits));
        }
        remaining -= u.dt;
        x = stage_transition(&x, u, limits);
    }
    Ok((x.q, x.qd))
}

fn within_stage(x: &StageState, u: &StageControl, s: f64, limits: &Limits) -> (JointVector, JointVector) {
    let mut q = JointVector::zeros();
    let mut qd = JointVector::zeros();
    for i in 0..DOF {
        let a = limits.accel[i] * u.dqd[i].signum();
        let t_acc = u.dqd[i].abs() / limits.accel[i];
        if s <= t_acc {
            q[i] = x.q[i] + x.qd[i] * s + 0.5 * a * s * s;
            qd[i] = x.qd[i] + a * s;
        } else {
            let cruise = x.qd[i] + u.dqd[i];
            q[i] = x.q[i] + x.qd[i] * t_acc + 0.5 * a * t_acc * t_acc + cruise * (s - t_acc);
            qd[i] = cruise;
        }
    }
    (q, qd)
}

/// Terminal quantities evaluated at `x_N`.
#[derive(Debug, Clone)]
pub struct TerminalTerms {
    pub position_error: Vector3<f64>,
    pub net_normal: Vector3<f64>,
    pub ball_direction: Vector3<f64>,
    pub local_velocity_error: Vector3<f64>,
}

pub fn terminal_terms(x: &StageState, spec: &CatchSpec, model: &KinematicModel) -> Result<TerminalTerms, OcpError> {
    let (p_ball, v_ball) = spec.flight.predict(&spec.ball, x.t);
    let speed = v_ball.norm();
    if speed < 1e-6 {
        return Err(OcpError::DegenerateVelocity(speed));
    }
    let state = model.chain_state(&x.q);
    let jac = model.jacobian_from_state(&state);
    let v_head = jac.fixed_rows::<3>(0) * x.qd;
    let r = state.pose.r;
    Ok(TerminalTerms {
        position_error: state.pose.p - p_ball,
        net_normal: r.column(1).into_owned(),
        ball_direction: v_ball / speed,
        local_velocity_error: r.transpose() * v_head - Vector3::new(0.0, spec.v_c, 0.0),
    })
}

/// Soft terminal cost: position and alignment error weighted by `w_p`, head
/// velocity mismatch (in the net frame) weighted by `w_v`.
pub fn terminal_cost(x: &StageState, spec: &CatchSpec, model: &KinematicModel) -> Result<f64, OcpError> {
    let terms = terminal_terms(x, spec, model)?;
    let alignment = 1.0 - terms.net_normal.dot(&terms.ball_direction);
    Ok(spec.w_p * (terms.position_error.norm_squared() + alignment)
        + spec.w_v * terms.local_velocity_error.norm_squared())
}

/// `[eps_p - |p_h - p_ball|, y_h . v_ball_hat - cos(eps_r)]`.
pub fn endpoint_constraints(x: &StageState, spec: &CatchSpec, model: &KinematicModel) -> Result<[f64; 2], OcpError> {
    let terms = terminal_terms(x, spec, model)?;
    Ok([
        spec.eps_p - terms.position_error.norm(),
        terms.net_normal.dot(&terms.ball_direction) - spec.eps_r.cos(),
    ])
}

pub fn objective(
    x0: &StageState,
    controls: &[StageControl],
    spec: &CatchSpec,
    limits: &Limits,
    model: &KinematicModel,
) -> Result<f64, OcpError> {
    let nodes = rollout(x0, controls, limits);
    let running: f64 = controls.iter().map(|u| spec.lambda * u.dt + u.dqd.norm_squared()).sum();
    Ok(running + terminal_cost(nodes.last().unwrap(), spec, model)?)
}

/// Cost the accel/cruise profile would incur under the exact integral
/// objective. Kept for diagnostics; the optimizer uses the smooth form.
pub fn exact_stage_cost(u: &StageControl, limits: &Limits, lambda: f64) -> f64 {
    lambda * u.dt + limits.accel.dot(&u.dqd.abs())
}

/// Position extremum inside a stage where a joint reverses direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtremumResidual {
    pub stage: usize,
    pub joint: usize,
    pub value: f64,
    pub upper: f64,
    pub lower: f64,
}

/// Path constraint residuals, grouped by kind. Node blocks cover `x[0]..x[N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathResiduals {
    /// `accel * dt - |dqd|`, stage-major.
    pub accel: Vec<f64>,
    /// Upper then lower residual per joint, node-major.
    pub velocity: Vec<f64>,
    pub position: Vec<f64>,
    pub extremum: Vec<ExtremumResidual>,
}

impl PathResiduals {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(&self.accel);
        out.extend(&self.velocity);
        out.extend(&self.position);
        for e in &self.extremum {
            out.push(e.upper);
            out.push(e.lower);
        }
        out
    }

    pub fn min(&self) -> f64 {
        self.flatten().into_iter().fold(f64::INFINITY, f64::min)
    }
}

/// Intra-stage extremum of joint `i`, if its velocity changes sign during the
/// stage.
pub fn stage_extremum(x: &StageState, u: &StageControl, limits: &Limits, i: usize) -> Option<f64> {
    let v = x.qd[i];
    if v * (v + u.dqd[i]) < 0.0 {
        Some(x.q[i] + v.signum() * v * v / (2.0 * limits.accel[i]))
    } else {
        None
    }
}

pub fn path_constraints(x0: &StageState, controls: &[StageControl], limits: &Limits) -> PathResiduals {
    let nodes = rollout(x0, controls, limits);
    let mut res = PathResiduals { accel: Vec::new(), velocity: Vec::new(), position: Vec::new(), extremum: Vec::new() };
    for u in controls {
        for i in 0..DOF {
            res.accel.push(limits.accel[i] * u.dt - u.dqd[i].abs());
        }
    }
    for x in &nodes {
        for i in 0..DOF {
            res.velocity.push(limits.qd_hi[i] - x.qd[i]);
            res.velocity.push(x.qd[i] - limits.qd_lo[i]);
        }
    }
    for x in &nodes {
        for i in 0..DOF {
            res.position.push(limits.q_hi[i] - x.q[i]);
            res.position.push(x.q[i] - limits.q_lo[i]);
        }
    }
    for (k, u) in controls.iter().enumerate() {
        for i in 0..DOF {
            if let Some(value) = stage_extremum(&nodes[k], u, limits, i) {
                res.extremum.push(ExtremumResidual {
                    stage: k,
                    joint: i,
                    value,
                    upper: limits.q_hi[i] - value,
                    lower: value - limits.q_lo[i],
                });
            }
        }
    }
    res
}

pub fn controls_to_vec(controls: &[StageControl]) -> Vec<f64> {
    let mut z = Vec::with_capacity(controls.len() * VARS_PER_STAGE);
    for u in controls {
        z.extend(u.dqd.iter());
        z.push(u.dt);
    }
    z
}

pub fn controls_from_slice(z: &[f64]) -> Vec<StageControl> {
    z.chunks_exact(VARS_PER_STAGE)
        .map(|c| StageControl { dqd: JointVector::from_column_slice(&c[..DOF]), dt: c[DOF] })
        .collect()
}

/// Stage nodes with first-order sensitivities with respect to the flattened
/// controls `z`. Rows of `dq`/`dqd` are joints, columns are decision variables.
pub(crate) struct SensitivityRollout {
    pub nodes: Vec<StageState>,
    pub dq: Vec<DMatrix<f64>>,
    pub dqd: Vec<DMatrix<f64>>,
    pub dt: Vec<DVector<f64>>,
}

pub(crate) fn rollout_with_sensitivities(x0: &StageState, controls: &[StageControl], limits: &Limits) -> SensitivityRollout {
    let n = controls.len() * VARS_PER_STAGE;
    let mut out = SensitivityRollout {
        nodes: vec![*x0],
        dq: vec![DMatrix::zeros(DOF, n)],
        dqd: vec![DMatrix::zeros(DOF, n)],
        dt: vec![DVector::zeros(n)],
    };
    for (k, u) in controls.iter().enumerate() {
        let x = *out.nodes.last().unwrap();
        let mut dq = out.dq[k].clone() + out.dqd[k].clone() * u.dt;
        let mut dqd = out.dqd[k].clone();
        let mut dt = out.dt[k].clone();
        let col_t = k * VARS_PER_STAGE + DOF;
        for i in 0..DOF {
            let col = k * VARS_PER_STAGE + i;
            dq[(i, col)] += u.dt - u.dqd[i].abs() / limits.accel[i];
            dq[(i, col_t)] += x.qd[i] + u.dqd[i];
            dqd[(i, col)] += 1.0;
        }
        dt[col_t] += 1.0;
        out.nodes.push(stage_transition(&x, u, limits));
        out.dq.push(dq);
        out.dqd.push(dqd);
        out.dt.push(dt);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_limits(accel: f64) -> Limits {
        Limits {
            accel: JointVector::repeat(accel),
            q_lo: JointVector::repeat(-10.0),
            q_hi: JointVector::repeat(10.0),
            qd_lo: JointVector::repeat(-10.0),
            qd_hi: JointVector::repeat(10.0),
        }
    }

    fn state(q: f64, qd: f64) -> StageState {
        StageState { q: JointVector::repeat(q), qd: JointVector::repeat(qd), t: 0.0 }
    }

    fn control(dqd: f64, dt: f64) -> StageControl {
        StageControl { dqd: JointVector::repeat(dqd), dt }
    }

    /// Fine fixed-step integration of the bang/cruise acceleration profile.
    fn dense_integrate(q: f64, qd: f64, dqd: f64, dt: f64, accel: f64, tau: f64) -> (f64, f64) {
        let t_acc = dqd.abs() / accel;
        let steps = 100_000;
        let h = tau / steps as f64;
        let (mut pos, mut vel) = (q, qd);
        for s in 0..steps {
            let t0 = s as f64 * h;
            // exact per-step update of a piecewise constant acceleration
            let split = (t_acc - t0).clamp(0.0, h);
            let a = accel * dqd.signum();
            pos += vel * split + 0.5 * a * split * split;
            vel += a * split;
            pos += vel * (h - split);
        }
        let _ = dt;
        (pos, vel)
    }

    #[test]
    fn pure_cruise() {
        let x = stage_transition(&state(0.0, 1.0), &control(0.0, 0.5), &scalar_limits(2.0));
        assert_abs_diff_eq!(x.q[0], 0.5);
        assert_abs_diff_eq!(x.qd[0], 1.0);
        assert_abs_diff_eq!(x.t, 0.5);
    }

    #[test]
    fn accel_then_cruise() {
        let x = stage_transition(&state(0.0, 0.0), &control(1.0, 1.0), &scalar_limits(1.0));
        assert_abs_diff_eq!(x.q[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(x.qd[0], 1.0);
        let (q, qd) = dense_integrate(0.0, 0.0, 1.0, 1.0, 1.0, 1.0);
        assert_abs_diff_eq!(x.q[0], q, epsilon = 1e-8);
        assert_abs_diff_eq!(x.qd[0], qd, epsilon = 1e-8);
    }

    #[test]
    fn decelerating_stage_matches_dense_integration() {
        let x = stage_transition(&state(0.0, 1.0), &control(-2.0, 2.0), &scalar_limits(2.0));
        // 1*2 - 2*2 - 0.5 * (-2*2)/2 = -1
        assert_abs_diff_eq!(x.q[0], -1.0, epsilon = 1e-15);
        let (q, qd) = dense_integrate(0.0, 1.0, -2.0, 2.0, 2.0, 2.0);
        assert_abs_diff_eq!(x.q[0], q, epsilon = 1e-8);
        assert_abs_diff_eq!(x.qd[0], qd, epsilon = 1e-8);
    }

    #[test]
    fn decode_endpoints() {
        let limits = Limits::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x0 = StageState {
            q: JointVector::from_fn(|_, _| rng.random_range(-0.5..0.5)),
            qd: JointVector::from_fn(|_, _| rng.random_range(-1.0..1.0)),
            t: 0.3,
        };
        let controls: Vec<_> = (0..3)
            .map(|_| StageControl { dqd: JointVector::from_fn(|_, _| rng.random_range(-2.0..2.0)), dt: 0.4 })
            .collect();
        let (q, qd) = decode(&x0, &controls, 0.0, &limits).unwrap();
        assert_eq!((q, qd), (x0.q, x0.qd));
        let end = rollout(&x0, &controls, &limits).pop().unwrap();
        let (q, qd) = decode(&x0, &controls, horizon(&controls), &limits).unwrap();
        assert!((q - end.q).amax() < 1e-10);
        assert!((qd - end.qd).amax() < 1e-10);
        assert!(matches!(decode(&x0, &controls, 1.3, &limits), Err(OcpError::OutOfHorizon { .. })));
    }

    #[test]
    fn decode_mid_acceleration_matches_dense_integration() {
        let limits = scalar_limits(3.0);
        let (q, qd) = decode(&state(0.2, -0.5), &[control(1.5, 1.0)], 0.3, &limits).unwrap();
        let (q_ref, qd_ref) = dense_integrate(0.2, -0.5, 1.5, 1.0, 3.0, 0.3);
        assert_abs_diff_eq!(q[0], q_ref, epsilon = 1e-8);
        assert_abs_diff_eq!(qd[0], qd_ref, epsilon = 1e-8);
    }

    fn spec_with_weights(w_p: f64, w_v: f64, lambda: f64) -> CatchSpec {
        CatchSpec {
            ball: BallParams { p_ref: Vector3::new(0.0, -3.0, 1.2), v_ref: Vector3::new(0.0, 4.5, 2.0), t_ref: 0.0 },
            flight: FlightModel::default(),
            eps_p: 0.05,
            eps_r: 0.35,
            v_c: 1.5,
            w_p,
            w_v,
            lambda,
        }
    }

    #[test]
    fn objective_trivial_values() {
        let model = KinematicModel::default();
        let limits = Limits::default();
        let x0 = state(0.0, 0.0);
        let spec = spec_with_weights(0.0, 0.0, 2.0);
        assert_eq!(objective(&x0, &[StageControl::zero()], &spec, &limits, &model).unwrap(), 0.0);
        let mut u = StageControl::zero();
        u.dt = 1.0;
        u.dqd[0] = 1.0;
        assert_abs_diff_eq!(objective(&x0, &[u], &spec, &limits, &model).unwrap(), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn terminal_cost_cases() {
        let model = KinematicModel::default();
        // Ball at the home net center moving along +y at the terminal time.
        let home = model.fk(&JointVector::zeros());
        let t = 0.5;
        let v = Vector3::new(0.0, 5.0, 0.0);
        let ball = BallParams {
            p_ref: home.p - v * t + FlightModel::default().gravity_vector() * (0.5 * t * t),
            v_ref: v - FlightModel::default().gravity_vector() * t,
            t_ref: 0.0,
        };
        let mut spec = spec_with_weights(10.0, 1.0, 1.0);
        spec.ball = ball;
        // Head moving at v_c along its normal.
        let jac = model.jacobian(&JointVector::zeros());
        let lin = jac.fixed_rows::<3>(0).into_owned();
        let qd = lin.svd(true, true).solve(&Vector3::new(0.0, spec.v_c, 0.0), 1e-12).unwrap();
        let x = StageState { q: JointVector::zeros(), qd, t };
        assert_abs_diff_eq!(terminal_cost(&x, &spec, &model).unwrap(), 0.0, epsilon = 1e-12);

        let zero_weights = spec_with_weights(0.0, 0.0, 1.0);
        assert_eq!(terminal_cost(&state(0.3, 0.7), &zero_weights, &model).unwrap(), 0.0);

        let velocity_only = spec_with_weights(0.0, 1.0, 1.0);
        let still = StageState { q: JointVector::zeros(), qd: JointVector::zeros(), t: 0.2 };
        assert_abs_diff_eq!(terminal_cost(&still, &velocity_only, &model).unwrap(), 2.25, epsilon = 1e-12);
    }

    #[test]
    fn endpoint_residual_cases() {
        let model = KinematicModel::default();
        let home = model.fk(&JointVector::zeros());
        let flight = FlightModel::default();
        let at = |p: Vector3<f64>, v: Vector3<f64>| BallParams { p_ref: p, v_ref: v, t_ref: 0.0 };
        let x = StageState { q: JointVector::zeros(), qd: JointVector::zeros(), t: 0.0 };
        let mut spec = spec_with_weights(1.0, 1.0, 1.0);
        spec.flight = flight;

        spec.ball = at(home.p, Vector3::new(0.0, 3.0, 0.0));
        let r = endpoint_constraints(&x, &spec, &model).unwrap();
        assert_abs_diff_eq!(r[0], spec.eps_p, epsilon = 1e-12);
        assert_abs_diff_eq!(r[1], 1.0 - spec.eps_r.cos(), epsilon = 1e-12);

        spec.ball = at(home.p + Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 3.0, 0.0));
        assert_abs_diff_eq!(endpoint_constraints(&x, &spec, &model).unwrap()[0], spec.eps_p - 1.0, epsilon = 1e-12);

        spec.eps_r = std::f64::consts::FRAC_PI_3;
        spec.ball = at(home.p, Vector3::new(3.0, 0.0, 0.0));
        assert_abs_diff_eq!(endpoint_constraints(&x, &spec, &model).unwrap()[1], -0.5, epsilon = 1e-12);

        spec.ball = at(home.p, Vector3::zeros());
        assert!(matches!(endpoint_constraints(&x, &spec, &model), Err(OcpError::DegenerateVelocity(_))));
    }

    #[test]
    fn extremum_included_when_velocity_reverses() {
        let limits = scalar_limits(2.0);
        let res = path_constraints(&state(0.0, 1.0), &[control(-2.0, 2.0)], &limits);
        assert_eq!(res.extremum.len(), DOF);
        assert_abs_diff_eq!(res.extremum[0].value, 0.25, epsilon = 1e-15);
        // sample the decoded parabola densely: its maximum is the extremum
        let x0 = state(0.0, 1.0);
        let max = (0..=20_000)
            .map(|s| decode(&x0, &[control(-2.0, 2.0)], 2.0 * s as f64 / 20_000.0, &limits).unwrap().0[0])
            .fold(f64::NEG_INFINITY, f64::max);
        assert_abs_diff_eq!(max, 0.25, epsilon = 1e-8);

        let same_sign = path_constraints(&state(0.0, 1.0), &[control(1.0, 2.0)], &limits);
        assert!(same_sign.extremum.is_empty());
    }

    #[test]
    fn interior_start_with_zero_controls_is_strictly_feasible() {
        let limits = Limits::default();
        let x0 = StageState { q: JointVector::repeat(0.1), qd: JointVector::repeat(0.2), t: 0.0 };
        let res = path_constraints(&x0, &[StageControl { dqd: JointVector::zeros(), dt: 0.1 }], &limits);
        assert!(res.min() > 0.0);
    }

    #[test]
    fn exact_stage_cost_cases() {
        let mut limits = scalar_limits(1.0);
        limits.accel[0] = 2.0;
        let mut u = StageControl { dqd: JointVector::zeros(), dt: 1.0 };
        assert_eq!(exact_stage_cost(&u, &limits, 3.0), 3.0);
        u.dqd[0] = 1.0;
        assert_eq!(exact_stage_cost(&u, &limits, 1.0), 3.0);
        let mut flipped = u;
        flipped.dqd[0] = -1.0;
        assert_eq!(exact_stage_cost(&u, &limits, 1.0), exact_stage_cost(&flipped, &limits, 1.0));
    }

    #[test]
    fn flatten_roundtrip() {
        let controls = vec![control(0.3, 0.7), control(-0.1, 0.2)];
        assert_eq!(controls_from_slice(&controls_to_vec(&controls)), controls);
    }
}
