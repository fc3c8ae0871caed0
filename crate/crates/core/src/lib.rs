//! Agile ball-catching benchmark.
//!
//! A seven-axis arm with a net end effector catches thrown balls. Two agent
//! families are provided: a receding-horizon stage-wise trajectory optimizer
//! and a small convolutional policy trained by blackbox gradient sensing.

// Negated comparisons are how the validators reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod ballistics;
pub mod blackbox;
pub mod cradle;
pub mod harness;
pub mod kinematics;
pub mod rewards;
pub mod sim;
pub mod sqp;
pub mod stage_ocp;
