//! Serial-chain kinematics for the rail-mounted 7-DOF arm: forward kinematics
//! of the net-center frame, the geometric Jacobian, and its directional
//! derivative (needed by the trajectory optimizer's velocity terms).

use nalgebra::{Matrix3, Rotation3, SMatrix, Unit, Vector3};
use serde::{Deserialize, Serialize};

pub const DOF: usize = 7;

pub type JointVector = SMatrix<f64, DOF, 1>;
pub type Jacobian = SMatrix<f64, 6, DOF>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Prismatic,
    Revolute,
}

/// One joint of the chain. `origin` is the translation from the previous
/// joint frame (expressed in that frame), `axis` the joint axis in the local
/// frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub kind: JointKind,
    pub origin: [f64; 3],
    pub axis: [f64; 3],
}

/// Homogeneous pose of the net-center frame. The local y axis is the net normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub p: Vector3<f64>,
    pub r: Matrix3<f64>,
}

impl Pose {
    pub fn net_normal(&self) -> Vector3<f64> {
        self.r.column(1).into_owned()
    }
}

/// Derived per-configuration quantities shared by FK, the Jacobian and its
/// derivative.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub pose: Pose,
    /// World-frame joint axes.
    pub axes: [Vector3<f64>; DOF],
    /// World-frame point on each joint axis.
    pub anchors: [Vector3<f64>; DOF],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicModel {
    pub joints: Vec<JointSpec>,
    /// Translation from the last joint frame to the net center.
    pub tool_offset: [f64; 3],
}

impl Default for KinematicModel {
    /// Nominal elbow manipulator on a lateral rail. At `q = 0` the upper arm
    /// points up, the forearm points toward the thrower (-y), and the head sits
    /// 0.25 m above the wrist with its normal along +y.
    fn default() -> Self {
        let j = |kind, origin, axis| JointSpec { kind, origin, axis };
        use JointKind::*;
        Self {
            joints: vec![
                j(Prismatic, [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]),
                j(Revolute, [0.0, 0.0, 0.70], [0.0, 0.0, 1.0]),
                j(Revolute, [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]),
                j(Revolute, [0.0, 0.0, 0.45], [1.0, 0.0, 0.0]),
                j(Revolute, [0.0, -0.20, 0.0], [0.0, 1.0, 0.0]),
                j(Revolute, [0.0, -0.25, 0.0], [1.0, 0.0, 0.0]),
                j(Revolute, [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]),
            ],
            tool_offset: [0.0, 0.0, 0.25],
        }
    }
}

/// Net-center pose of the default model at `q = 0`.
pub const HOME_POSITION: [f64; 3] = [0.0, -0.45, 1.40];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("chain must have exactly {DOF} joints, got {0}")]
    WrongLength(usize),
    #[error("first joint must be prismatic and the rest revolute")]
    WrongJointTypes,
    #[error("joint {0} has a zero-length axis")]
    ZeroAxis(usize),
}

impl KinematicModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.joints.len() != DOF {
            return Err(ModelError::WrongLength(self.joints.len()));
        }
        if self.joints[0].kind != JointKind::Prismatic
            || self.joints[1..].iter().any(|j| j.kind != JointKind::Revolute)
        {
            return Err(ModelError::WrongJointTypes);
        }
        for (i, joint) in self.joints.iter().enumerate() {
            if Vector3::from(joint.axis).norm() < 1e-12 {
                return Err(ModelError::ZeroAxis(i));
            }
        }
        Ok(())
    }

    /// Unit vector of the prismatic base joint in the world frame.
    pub fn base_axis(&self) -> Vector3<f64> {
        Vector3::from(self.joints[0].axis).normalize()
    }

    pub fn chain_state(&self, q: &JointVector) -> ChainState {
        let mut rot = Matrix3::identity();
        let mut pos = Vector3::zeros();
        let mut axes = [Vector3::zeros(); DOF];
        let mut anchors = [Vector3::zeros(); DOF];
        for (i, joint) in self.joints.iter().enumerate() {
            pos += rot * Vector3::from(joint.origin);
            let local_axis = Unit::new_normalize(Vector3::from(joint.axis));
            axes[i] = rot * local_axis.into_inner();
            anchors[i] = pos;
            match joint.kind {
                JointKind::Prismatic => pos += axes[i] * q[i],
                JointKind::Revolute => {
                    rot *= Rotation3::from_axis_angle(&local_axis, q[i]).into_inner();
                }
            }
        }
        pos += rot * Vector3::from(self.tool_offset);
        ChainState { pose: Pose { p: pos, r: rot }, axes, anchors }
    }

    pub fn fk(&self, q: &JointVector) -> Pose {
        self.chain_state(q).pose
    }

    /// Geometric Jacobian of the net-center frame: rows 0..3 map joint rates
    /// to linear velocity, rows 3..6 to angular velocity, both in the world frame.
    pub fn jacobian(&self, q: &JointVector) -> Jacobian {
        self.jacobian_from_state(&self.chain_state(q))
    }

    pub fn jacobian_from_state(&self, state: &ChainState) -> Jacobian {
        let mut jac = Jacobian::zeros();
        for i in 0..DOF {
            let (lin, ang) = match self.joints[i].kind {
                JointKind::Prismatic => (state.axes[i], Vector3::zeros()),
                JointKind::Revolute => {
                    (state.axes[i].cross(&(state.pose.p - state.anchors[i])), state.axes[i])
                }
            };
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
            jac.fixed_view_mut::<3, 1>(3, i).copy_from(&ang);
        }
        jac
    }

    /// `(v_h, omega_h)` of the net-center frame for joint rates `qd`.
    pub fn head_velocity(&self, q: &JointVector, qd: &JointVector) -> (Vector3<f64>, Vector3<f64>) {
        let twist = self.jacobian(q) * qd;
        (twist.fixed_rows::<3>(0).into_owned(), twist.fixed_rows::<3>(3).into_owned())
    }

    /// Partial derivative of the linear-velocity rows of the Jacobian with
    /// respect to joint `j`, i.e. d(J_v)/dq_j as a 3x7 block.
    pub fn linear_jacobian_derivative(&self, state: &ChainState, jac: &Jacobian, j: usize) -> SMatrix<f64, 3, DOF> {
        let mut out = SMatrix::<f64, 3, DOF>::zeros();
        let z_j = state.axes[j];
        let revolute_j = self.joints[j].kind == JointKind::Revolute;
        let dp: Vector3<f64> = jac.fixed_view::<3, 1>(0, j).into_owned();
        for i in 0..DOF {
            let (dz_i, d_anchor) = if j < i {
                if revolute_j {
                    (z_j.cross(&state.axes[i]), z_j.cross(&(state.anchors[i] - state.anchors[j])))
                } else {
                    (Vector3::zeros(), z_j)
                }
            } else {
                (Vector3::zeros(), Vector3::zeros())
            };
            let col = match self.joints[i].kind {
                JointKind::Prismatic => dz_i,
                JointKind::Revolute => {
                    let z_i = state.axes[i];
                    dz_i.cross(&(state.pose.p - state.anchors[i])) + z_i.cross(&(dp - d_anchor))
                }
            };
            out.fixed_view_mut::<3, 1>(0, i).copy_from(&col);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_q(rng: &mut impl Rng) -> JointVector {
        JointVector::from_fn(|i, _| if i == 0 { rng.random_range(-1.0..1.0) } else { rng.random_range(-3.0..3.0) })
    }

    #[test]
    fn default_model_is_valid() {
        KinematicModel::default().validate().unwrap();
    }

    #[test]
    fn home_pose_matches_golden_value() {
        let pose = KinematicModel::default().fk(&JointVector::zeros());
        assert_abs_diff_eq!(pose.p, Vector3::from(HOME_POSITION), epsilon = 1e-12);
        assert_abs_diff_eq!(pose.r, Matrix3::identity(), epsilon = 1e-12);
        assert_abs_diff_eq!(pose.net_normal(), Vector3::y(), epsilon = 1e-12);
    }

    #[test]
    fn prismatic_joint_translates_without_rotation() {
        let model = KinematicModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random_q(&mut rng);
        let mut shifted = q;
        shifted[0] += 0.37;
        let (a, b) = (model.fk(&q), model.fk(&shifted));
        assert_abs_diff_eq!(b.p - a.p, model.base_axis() * 0.37, epsilon = 1e-12);
        assert_abs_diff_eq!(a.r, b.r, epsilon = 1e-12);
    }

    #[test]
    fn tool_roll_keeps_net_center_fixed() {
        let model = KinematicModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = random_q(&mut rng);
        let mut rolled = q;
        rolled[6] += 1.1;
        assert_abs_diff_eq!(model.fk(&q).p, model.fk(&rolled).p, epsilon = 1e-12);
    }

    #[test]
    fn rotations_are_orthonormal_and_periodic() {
        let model = KinematicModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let q = random_q(&mut rng);
            let pose = model.fk(&q);
            assert_abs_diff_eq!(pose.r.transpose() * pose.r, Matrix3::identity(), epsilon = 1e-9);
            assert_abs_diff_eq!(pose.r.determinant(), 1.0, epsilon = 1e-9);
            for j in 1..DOF {
                let mut wrapped = q;
                wrapped[j] += 2.0 * std::f64::consts::PI;
                let other = model.fk(&wrapped);
                assert_abs_diff_eq!(pose.p, other.p, epsilon = 1e-9);
                assert_abs_diff_eq!(pose.r, other.r, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn prismatic_column() {
        let model = KinematicModel::default();
        let jac = model.jacobian(&random_q(&mut ChaCha8Rng::seed_from_u64(4)));
        assert_abs_diff_eq!(jac.fixed_view::<3, 1>(0, 0).into_owned(), model.base_axis(), epsilon = 1e-15);
        assert_abs_diff_eq!(jac.fixed_view::<3, 1>(3, 0).into_owned(), Vector3::zeros(), epsilon = 1e-15);
    }

    #[test]
    fn translation_rows_full_rank_at_home() {
        let jac = KinematicModel::default().jacobian(&JointVector::zeros());
        let lin = jac.fixed_rows::<3>(0).into_owned();
        let svd = lin.svd(false, false);
        assert!(svd.singular_values.min() > 0.1, "{:?}", svd.singular_values);
    }

    #[test]
    fn head_velocity_trivial_cases() {
        let model = KinematicModel::default();
        let q = random_q(&mut ChaCha8Rng::seed_from_u64(5));
        let (v, w) = model.head_velocity(&q, &JointVector::zeros());
        assert_eq!(v, Vector3::zeros());
        assert_eq!(w, Vector3::zeros());
        let mut qd = JointVector::zeros();
        qd[0] = 1.7;
        let (v, w) = model.head_velocity(&q, &qd);
        assert_abs_diff_eq!(v, model.base_axis() * 1.7, epsilon = 1e-14);
        assert_abs_diff_eq!(w, Vector3::zeros(), epsilon = 1e-14);
    }

    #[test]
    fn head_velocity_matches_finite_difference() {
        let model = KinematicModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = 1e-5;
        for _ in 0..100 {
            let q = random_q(&mut rng);
            let qd = JointVector::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let (v, _) = model.head_velocity(&q, &qd);
            let fd = (model.fk(&(q + qd * h)).p - model.fk(&(q - qd * h)).p) / (2.0 * h);
            assert!((v - fd).amax() < 1e-6);
        }
    }

    #[test]
    fn jacobian_derivative_matches_finite_difference() {
        let model = KinematicModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = 1e-6;
        for _ in 0..20 {
            let q = random_q(&mut rng);
            let state = model.chain_state(&q);
            let jac = model.jacobian_from_state(&state);
            for j in 0..DOF {
                let mut qp = q;
                let mut qm = q;
                qp[j] += h;
                qm[j] -= h;
                let fd = (model.jacobian(&qp) - model.jacobian(&qm)) / (2.0 * h);
                let analytic = model.linear_jacobian_derivative(&state, &jac, j);
                let err = (analytic - fd.fixed_rows::<3>(0)).amax();
                assert!(err < 1e-6, "joint {j}: {err}");
            }
        }
    }
}
