//! Newtonian ball-flight prediction and least-squares estimation of the
//! flight parameters from position measurements.

use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Standard gravitational acceleration used when nothing else is configured.
pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BallisticsError {
    #[error("need at least 3 observations spanning a positive time interval, got {count}")]
    InsufficientData { count: usize },
    #[error("least-squares normal equations are rank deficient")]
    Degenerate,
    #[error("ball never crosses the plane y = {plane_y}")]
    NoCrossing { plane_y: f64 },
}

/// Parametric ballistic state: position and velocity at a reference epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallParams {
    pub p_ref: Vector3<f64>,
    pub v_ref: Vector3<f64>,
    pub t_ref: f64,
}

/// A single (possibly noisy) position measurement of the ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallObservation {
    pub t: f64,
    pub p_meas: Vector3<f64>,
}

/// Gravity-only flight model. `gravity` is the magnitude of the downward
/// acceleration along world z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlightModel {
    pub gravity: f64,
}

impl Default for FlightModel {
    fn default() -> Self {
        Self { gravity: STANDARD_GRAVITY }
    }
}

impl FlightModel {
    pub fn new(gravity: f64) -> Self {
        Self { gravity }
    }

    pub fn gravity_vector(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, -self.gravity)
    }

    /// Position and velocity of the ball at absolute time `t`.
    pub fn predict(&self, params: &BallParams, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        let dt = t - params.t_ref;
        let g = self.gravity_vector();
        let position = params.p_ref + params.v_ref * dt + g * (0.5 * dt * dt);
        let velocity = params.v_ref + g * dt;
        (position, velocity)
    }

    /// Re-anchor the parameters at time `t`.
    pub fn advance(&self, params: &BallParams, t: f64) -> BallParams {
        let (p_ref, v_ref) = self.predict(params, t);
        BallParams { p_ref, v_ref, t_ref: t }
    }

    /// Specific mechanical energy (per unit mass).
    pub fn specific_energy(&self, position: &Vector3<f64>, velocity: &Vector3<f64>) -> f64 {
        0.5 * velocity.norm_squared() + self.gravity * position.z
    }

    /// Ordinary least squares fit of `(p_ref, v_ref)` anchored at the first
    /// observation time, after removing the known gravity parabola.
    pub fn fit(&self, observations: &[BallObservation]) -> Result<BallParams, BallisticsError> {
        let count = observations.len();
        if count < 3 {
            return Err(BallisticsError::InsufficientData { count });
        }
        let t0 = observations[0].t;
        let span = observations[count - 1].t - t0;
        if !(span > 0.0) {
            return Err(BallisticsError::InsufficientData { count });
        }
        // Each axis is the same 2-parameter regression y = p + v*dt, so the
        // normal matrix is shared.
        let g = self.gravity_vector();
        let mut normal = Matrix2::<f64>::zeros();
        let mut rhs = [Vector2::zeros(); 3];
        for obs in observations {
            let dt = obs.t - t0;
            normal[(0, 0)] += 1.0;
            normal[(0, 1)] += dt;
            normal[(1, 1)] += dt * dt;
            let y = obs.p_meas - g * (0.5 * dt * dt);
            for axis in 0..3 {
                rhs[axis][0] += y[axis];
                rhs[axis][1] += y[axis] * dt;
            }
        }
        normal[(1, 0)] = normal[(0, 1)];
        let det = normal.determinant();
        if det.abs() <= 1e-12 * normal[(0, 0)] * normal[(1, 1)].max(1e-300) {
            return Err(BallisticsError::Degenerate);
        }
        let inv = normal.try_inverse().ok_or(BallisticsError::Degenerate)?;
        let mut p_ref = Vector3::zeros();
        let mut v_ref = Vector3::zeros();
        for axis in 0..3 {
            let sol = inv * rhs[axis];
            p_ref[axis] = sol[0];
            v_ref[axis] = sol[1];
        }
        Ok(BallParams { p_ref, v_ref, t_ref: t0 })
    }

    /// Earliest time `t >= t_ref` at which the ball's y coordinate equals
    /// `plane_y`. Gravity acts only along z, so the crossing is linear in time.
    pub fn time_at_plane(&self, params: &BallParams, plane_y: f64) -> Result<f64, BallisticsError> {
        let gap = plane_y - params.p_ref.y;
        if gap == 0.0 {
            return Ok(params.t_ref);
        }
        let vy = params.v_ref.y;
        if vy == 0.0 || gap.signum() != vy.signum() {
            return Err(BallisticsError::NoCrossing { plane_y });
        }
        Ok(params.t_ref + gap / vy)
    }
}

/// Convenience wrappers with standard gravity.
pub fn predict(params: &BallParams, t: f64) -> (Vector3<f64>, Vector3<f64>) {
    FlightModel::default().predict(params, t)
}

pub fn fit(observations: &[BallObservation]) -> Result<BallParams, BallisticsError> {
    FlightModel::default().fit(observations)
}

pub fn time_at_plane(params: &BallParams, plane_y: f64) -> Result<f64, BallisticsError> {
    FlightModel::default().time_at_plane(params, plane_y)
}
