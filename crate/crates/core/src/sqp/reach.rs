//! Single-joint reach problem: start at rest at the origin and arrive at a
//! target position in one accel/cruise stage. Used to check the solver
//! against exhaustive search.

use nalgebra::{DMatrix, DVector};

use super::{project_positive_definite, Linearization, NlpProblem, SqpError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReachProblem {
    pub target: f64,
    pub accel: f64,
    pub lambda: f64,
    /// Weight of the squared miss distance.
    pub weight: f64,
    pub q_max: f64,
    pub qd_max: f64,
}

impl ReachProblem {
    pub fn new(target: f64) -> Self {
        Self { target, accel: 1.0, lambda: 10.0, weight: 1e3, q_max: 10.0, qd_max: 10.0 }
    }

    /// Final position after velocity change `dqd` held over `dt`.
    pub fn final_position(&self, dqd: f64, dt: f64) -> f64 {
        dqd * dt - 0.5 * dqd * dqd.abs() / self.accel
    }

    pub fn objective(&self, dqd: f64, dt: f64) -> f64 {
        let miss = self.final_position(dqd, dt) - self.target;
        self.lambda * dt + dqd * dqd + self.weight * miss * miss
    }

    /// `[accel (2), velocity (2), position (2)]`, all `>= 0`.
    pub fn constraints(&self, dqd: f64, dt: f64) -> [f64; 6] {
        let q = self.final_position(dqd, dt);
        [
            self.accel * dt - dqd,
            self.accel * dt + dqd,
            self.qd_max - dqd,
            dqd + self.qd_max,
            self.q_max - q,
            q + self.q_max,
        ]
    }

    pub fn initial_guess(&self) -> DVector<f64> {
        DVector::from_row_slice(&[0.0, 1.0])
    }
}

impl NlpProblem for ReachProblem {
    fn num_vars(&self) -> usize {
        2
    }

    fn num_constraints(&self) -> usize {
        6
    }

    fn nonnegative(&self) -> &[usize] {
        &[1]
    }

    fn values(&self, z: &DVector<f64>) -> Result<(f64, DVector<f64>), SqpError> {
        Ok((self.objective(z[0], z[1]), DVector::from_row_slice(&self.constraints(z[0], z[1]))))
    }

    fn linearize(&self, z: &DVector<f64>, _multipliers: &DVector<f64>) -> Result<Linearization, SqpError> {
        let (dqd, dt) = (z[0], z[1]);
        let miss = self.final_position(dqd, dt) - self.target;
        let dq = [dt - dqd.abs() / self.accel, dqd];
        let gradient = DVector::from_row_slice(&[
            2.0 * dqd + 2.0 * self.weight * miss * dq[0],
            self.lambda + 2.0 * self.weight * miss * dq[1],
        ]);
        // Exact Hessian, clipped to positive definite.
        let mut hessian = DMatrix::from_fn(2, 2, |i, j| 2.0 * self.weight * dq[i] * dq[j]);
        hessian[(0, 0)] += 2.0 - 2.0 * self.weight * miss * dqd.signum() / self.accel;
        hessian[(0, 1)] += 2.0 * self.weight * miss;
        hessian[(1, 0)] += 2.0 * self.weight * miss;
        let hessian = project_positive_definite(&hessian, 1e-9 * (1.0 + hessian.amax()));
        let jacobian = DMatrix::from_row_slice(
            6,
            2,
            &[-1.0, self.accel, 1.0, self.accel, -1.0, 0.0, 1.0, 0.0, -dq[0], -dq[1], dq[0], dq[1]],
        );
        let (objective, constraints) = self.values(z)?;
        Ok(Linearization { objective, gradient, hessian, constraints, jacobian })
    }
}
