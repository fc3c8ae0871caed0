//! Episodic catching simulator: thrower, ballistic ball, velocity-tracking
//! robot at a fixed control rate, noisy observations and catch detection.

mod net;
mod thrower;

pub use net::{ContactConfig, NetFrame, Pocket};
pub use thrower::{loft_for_catch_speed, Side, Throw, ThrowerConfig, DEFAULT_LOFT_DEG};

use std::collections::VecDeque;

use nalgebra::{DMatrix, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ballistics::{BallObservation, BallParams, FlightModel};
use crate::kinematics::{JointVector, KinematicModel, DOF};
use crate::rewards::{self, RewardConfig, RewardMode, RewardTerms, StepTrace};
use crate::stage_ocp::Limits;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("episode is over")]
    EpisodeOver,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub control_dt: f64,
    pub episode_horizon: f64,
    pub obs_noise_std: f64,
    pub n_hist: usize,
    pub n_pred: usize,
    pub net_radius: f64,
    pub net_depth: f64,
    pub catch_hold_time: f64,
    pub limits: Limits,
    pub model: KinematicModel,
    /// Gravity acting on the simulated ball.
    pub gravity: f64,
    /// Gravity assumed by the ball predictor.
    pub model_gravity: f64,
    /// First-order lag time constant on velocity commands, 0 for none.
    pub tracking_lag: f64,
    pub contact: ContactConfig,
    pub reward: RewardConfig,
    pub reward_mode: RewardMode,
    pub record_trace: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            control_dt: 1.0 / 75.0,
            episode_horizon: 1.5,
            obs_noise_std: 0.005,
            n_hist: 8,
            n_pred: 12,
            net_radius: 0.10,
            net_depth: 0.15,
            catch_hold_time: 0.25,
            limits: Limits::default(),
            model: KinematicModel::default(),
            gravity: 9.81,
            model_gravity: 9.81,
            tracking_lag: 0.0,
            contact: ContactConfig::default(),
            reward: RewardConfig::default(),
            reward_mode: RewardMode::Sim,
            record_trace: false,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let err = |m: String| Err(SimError::ConfigInvalid(m));
        if !(self.control_dt > 0.0) || !(self.episode_horizon > 0.0) {
            return err("control_dt and episode_horizon must be positive".into());
        }
        if self.n_hist < 1 || self.n_pred < 1 {
            return err("n_hist and n_pred must be at least 1".into());
        }
        if !(self.obs_noise_std >= 0.0) || !(self.tracking_lag >= 0.0) || !(self.catch_hold_time >= 0.0) {
            return err("noise, lag and hold time must be nonnegative".into());
        }
        if !(self.net_radius > 0.0) || !(self.net_depth > 0.0) {
            return err("net dimensions must be positive".into());
        }
        if !(self.gravity > 0.0) || !(self.model_gravity > 0.0) {
            return err("gravity must be positive".into());
        }
        self.limits.validate().map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
        self.model.validate().map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
        self.contact.validate().map_err(SimError::ConfigInvalid)?;
        self.reward.validate().map_err(SimError::ConfigInvalid)?;
        Ok(())
    }

    pub fn flight_model(&self) -> FlightModel {
        FlightModel::new(self.model_gravity)
    }

    pub fn pocket(&self) -> Pocket {
        Pocket { radius: self.net_radius, depth: self.net_depth }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// `n_hist x 7`, oldest row first.
    pub joint_history: DMatrix<f64>,
    /// `n_pred x 6` rows of `(p, v)` at `t, t + dt, ...`.
    pub predicted_ball: DMatrix<f64>,
    /// Fitted flight parameters, once at least three measurements exist.
    pub ball_estimate: Option<BallParams>,
    pub t: f64,
    pub q: JointVector,
    pub qd: JointVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetContact {
    InNet,
    NotInNet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub t: f64,
    pub contact: NetContact,
    pub distance: f64,
    pub caught: bool,
    pub done: bool,
    pub position_clamped: bool,
}

/// Full per-step record for episode logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub t: f64,
    pub command: JointVector,
    pub q: JointVector,
    pub qd: JointVector,
    pub ball_p: Vector3<f64>,
    pub ball_v: Vector3<f64>,
    pub net_p: Vector3<f64>,
    pub in_net: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub caught: bool,
    pub min_net_ball_distance: f64,
    pub reward_terms: RewardTerms,
    pub total_reward: f64,
    pub catch_side: Option<Side>,
    pub constraint_violated: bool,
    pub throw: Throw,
    pub trace: Option<Vec<StepLog>>,
}

impl EpisodeResult {
    pub fn total(&self, mode: RewardMode, cfg: &RewardConfig) -> f64 {
        self.reward_terms.total(mode, cfg)
    }
}

/// Per-episode log: config echo, seed and outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub env: EnvConfig,
    pub thrower: ThrowerConfig,
    pub seed: u64,
    pub result: EpisodeResult,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ball {
    p: Vector3<f64>,
    v: Vector3<f64>,
    contained: bool,
}

/// One episode. Single owner; distinct episodes are independent.
#[derive(Debug, Clone)]
pub struct Env {
    cfg: EnvConfig,
    thrower: ThrowerConfig,
    seed: u64,
    rng: ChaCha8Rng,
    throw: Throw,
    t: f64,
    q: JointVector,
    qd: JointVector,
    command_state: JointVector,
    ball: Ball,
    measurements: Vec<BallObservation>,
    history: VecDeque<JointVector>,
    trace: Vec<StepTrace>,
    log: Option<Vec<StepLog>>,
    min_distance: f64,
    in_net_time: f64,
    caught: bool,
    catch_side: Option<Side>,
    done: bool,
}

impl Env {
    pub fn reset(cfg: &EnvConfig, thrower: &ThrowerConfig, seed: u64) -> Result<(Self, Observation), SimError> {
        cfg.validate()?;
        thrower.validate().map_err(SimError::ConfigInvalid)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let throw = thrower.sample(&mut rng);
        let q = JointVector::zeros();
        let mut history = VecDeque::with_capacity(cfg.n_hist);
        history.extend(std::iter::repeat_n(JointVector::zeros(), cfg.n_hist - 1));
        history.push_back(q);
        let mut env = Self {
            cfg: cfg.clone(),
            thrower: thrower.clone(),
            seed,
            rng,
            throw,
            t: 0.0,
            q,
            qd: JointVector::zeros(),
            command_state: JointVector::zeros(),
            ball: Ball { p: throw.ball.p_ref, v: throw.ball.v_ref, contained: false },
            measurements: Vec::new(),
            history,
            trace: Vec::new(),
            log: cfg.record_trace.then(Vec::new),
            min_distance: f64::INFINITY,
            in_net_time: 0.0,
            caught: false,
            catch_side: None,
            done: false,
        };
        env.min_distance = (env.ball.p - env.net_frame(&q, &env.qd).center).norm();
        env.measure();
        let obs = env.observe();
        Ok((env, obs))
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn thrower(&self) -> &ThrowerConfig {
        &self.thrower
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn throw(&self) -> &Throw {
        &self.throw
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn joint_state(&self) -> (JointVector, JointVector) {
        (self.q, self.qd)
    }

    /// True ball position and velocity.
    pub fn ball_state(&self) -> (Vector3<f64>, Vector3<f64>) {
        (self.ball.p, self.ball.v)
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn caught(&self) -> bool {
        self.caught
    }

    /// Place the robot directly; for oracle tests.
    pub fn teleport(&mut self, q: JointVector, qd: JointVector) {
        self.q = q;
        self.qd = qd;
        self.command_state = qd;
    }

    pub fn net_frame(&self, q: &JointVector, qd: &JointVector) -> NetFrame {
        let state = self.cfg.model.chain_state(q);
        let jac = self.cfg.model.jacobian_from_state(&state);
        let twist = jac * qd;
        NetFrame {
            center: state.pose.p,
            normal: state.pose.net_normal(),
            velocity: twist.fixed_rows::<3>(0).into_owned(),
            omega: twist.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn detect_catch(&self) -> NetContact {
        let frame = self.net_frame(&self.q, &self.qd);
        self.contact_state(&frame)
    }

    fn contact_state(&self, frame: &NetFrame) -> NetContact {
        let rel_speed = (self.ball.v - frame.velocity).norm();
        if self.cfg.pocket().contains(frame, &self.ball.p) && rel_speed < self.cfg.contact.capture_speed {
            NetContact::InNet
        } else {
            NetContact::NotInNet
        }
    }

    fn measure(&mut self) {
        let mut p_meas = self.ball.p;
        if self.cfg.obs_noise_std > 0.0 {
            let noise = Normal::new(0.0, self.cfg.obs_noise_std).expect("validated noise");
            for axis in 0..3 {
                p_meas[axis] += noise.sample(&mut self.rng);
            }
        }
        self.measurements.push(BallObservation { t: self.t, p_meas });
    }

    pub fn observe(&self) -> Observation {
        let n_hist = self.cfg.n_hist;
        let joint_history = DMatrix::from_fn(n_hist, DOF, |r, c| self.history[r][c]);
        let flight = self.cfg.flight_model();
        let ball_estimate = flight.fit(&self.measurements).ok();
        let mut predicted_ball = DMatrix::zeros(self.cfg.n_pred, 6);
        if let Some(params) = &ball_estimate {
            for j in 0..self.cfg.n_pred {
                let (p, v) = flight.predict(params, self.t + j as f64 * self.cfg.control_dt);
                for a in 0..3 {
                    predicted_ball[(j, a)] = p[a];
                    predicted_ball[(j, 3 + a)] = v[a];
                }
            }
        }
        Observation { joint_history, predicted_ball, ball_estimate, t: self.t, q: self.q, qd: self.qd }
    }

    pub fn step(&mut self, command: &JointVector) -> Result<(Observation, StepInfo), SimError> {
        if self.done {
            return Err(SimError::EpisodeOver);
        }
        let dt = self.cfg.control_dt;
        if self.cfg.tracking_lag > 0.0 {
            let blend = 1.0 - (-dt / self.cfg.tracking_lag).exp();
            self.command_state += (command - self.command_state) * blend;
        } else {
            self.command_state = *command;
        }
        let qd0 = self.qd;
        let q0 = self.q;
        let mut qd1 = qd0;
        for i in 0..DOF {
            let da = self.cfg.limits.accel[i] * dt;
            qd1[i] = qd0[i] + (self.command_state[i] - qd0[i]).clamp(-da, da);
        }

        self.advance_ball(&q0, &qd0, &qd1);

        let limits = &self.cfg.limits;
        let mut q1 = q0 + (qd0 + qd1) * (0.5 * dt);
        let mut violations = vec![0.0; DOF];
        let mut position_clamped = false;
        for i in 0..DOF {
            let (lo, hi) = (limits.qd_lo[i], limits.qd_hi[i]);
            if qd1[i] > hi {
                violations[i] += (qd1[i] - hi) / hi;
            } else if qd1[i] < lo {
                violations[i] += (lo - qd1[i]) / -lo;
            }
            let (lo, hi) = (limits.q_lo[i], limits.q_hi[i]);
            if q1[i] > hi || q1[i] < lo {
                let excess = if q1[i] > hi { q1[i] - hi } else { lo - q1[i] };
                violations[i] += excess / (hi - lo);
                q1[i] = q1[i].clamp(lo, hi);
                position_clamped = true;
            }
        }
        if position_clamped {
            log::debug!("joint position clamped at t = {:.3}", self.t + dt);
        }
        self.q = q1;
        self.qd = qd1;
        self.t += dt;
        self.history.pop_front();
        self.history.push_back(q1);
        self.measure();

        let frame = self.net_frame(&q1, &qd1);
        let distance = (self.ball.p - frame.center).norm();
        self.min_distance = self.min_distance.min(distance);
        let contact = self.contact_state(&frame);
        if contact == NetContact::InNet {
            self.in_net_time += dt;
        } else {
            self.in_net_time = 0.0;
        }
        if !self.caught && contact == NetContact::InNet && self.in_net_time > self.cfg.catch_hold_time - 1e-9 {
            self.caught = true;
            let offset = (frame.center - self.cfg.model.base_axis() * q1[0]).dot(&self.cfg.model.base_axis());
            self.catch_side = Some(if offset < 0.0 { Side::Left } else { Side::Right });
        }
        let speed = self.ball.v.norm();
        self.trace.push(StepTrace {
            dt,
            distance,
            relative_speed: (self.ball.v - frame.point_velocity(&self.ball.p)).norm(),
            alignment: if speed > 0.0 { self.ball.v.dot(&frame.normal) / speed } else { 0.0 },
            in_net: contact == NetContact::InNet,
            violations,
        });
        if let Some(log) = &mut self.log {
            log.push(StepLog {
                t: self.t,
                command: *command,
                q: q1,
                qd: qd1,
                ball_p: self.ball.p,
                ball_v: self.ball.v,
                net_p: frame.center,
                in_net: contact == NetContact::InNet,
            });
        }
        let landed = self.ball.p.z < 0.0 && !self.ball.contained;
        self.done = landed || self.t >= self.cfg.episode_horizon - 1e-9;
        let info = StepInfo { t: self.t, contact, distance, caught: self.caught, done: self.done, position_clamped };
        Ok((self.observe(), info))
    }

    /// Ball update over one control period while the joints follow a
    /// constant acceleration from `qd0` to `qd1`.
    fn advance_ball(&mut self, q0: &JointVector, qd0: &JointVector, qd1: &JointVector) {
        let dt = self.cfg.control_dt;
        let g = Vector3::new(0.0, 0.0, -self.cfg.gravity);
        let here = self.net_frame(q0, qd0);
        let near = self.ball.contained
            || (self.ball.p - here.center).norm() < self.cfg.contact.near_distance + self.ball.v.norm() * dt;
        if !near {
            self.ball.p += self.ball.v * dt + g * (0.5 * dt * dt);
            self.ball.v += g * dt;
            return;
        }
        let contact = self.cfg.contact;
        let pocket = self.cfg.pocket();
        let n = contact.substeps;
        let h = dt / n as f64;
        let accel = (qd1 - qd0) / dt;
        for k in 1..=n {
            let tau = k as f64 * h;
            let q = q0 + qd0 * tau + accel * (0.5 * tau * tau);
            let qd = qd0 + accel * tau;
            let frame = self.net_frame(&q, &qd);
            if self.ball.contained {
                let a = g + pocket.contact_acceleration(&frame, &self.ball.p, &self.ball.v, &contact);
                self.ball.v += a * h;
                self.ball.p += self.ball.v * h;
                if pocket.escaped(&frame, &self.ball.p, &contact) {
                    self.ball.contained = false;
                }
            } else {
                self.ball.p += self.ball.v * h + g * (0.5 * h * h);
                self.ball.v += g * h;
                if pocket.contains(&frame, &self.ball.p) {
                    self.ball.contained = true;
                }
            }
            self.min_distance = self.min_distance.min((self.ball.p - frame.center).norm());
        }
    }

    pub fn result(&self) -> EpisodeResult {
        let terms = RewardTerms::compute(self.min_distance, self.caught, &self.trace, &self.cfg.reward);
        EpisodeResult {
            caught: self.caught,
            min_net_ball_distance: self.min_distance,
            reward_terms: terms,
            total_reward: terms.total(self.cfg.reward_mode, &self.cfg.reward),
            catch_side: self.catch_side,
            constraint_violated: rewards::integrated_violation(&self.trace) > 0.0,
            throw: self.throw,
            trace: self.log.clone(),
        }
    }

    pub fn reward_trace(&self) -> &[StepTrace] {
        &self.trace
    }

    pub fn episode_log(&self) -> EpisodeLog {
        EpisodeLog { env: self.cfg.clone(), thrower: self.thrower.clone(), seed: self.seed, result: self.result() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn quiet() -> EnvConfig {
        EnvConfig { obs_noise_std: 0.0, ..Default::default() }
    }

    #[test]
    fn initial_distance_is_thrower_distance() {
        for seed in 0..5 {
            let (env, _) = Env::reset(&EnvConfig::default(), &ThrowerConfig::default(), seed).unwrap();
            let d = env.min_distance;
            // Release point to net head, which sits 0.45 m in front of the rail
            // and 1.25 m above the release height.
            let expected = Vector3::new(0.0, 3.9 - 0.45, 0.15 - 1.40).norm();
            assert_abs_diff_eq!(d, expected, epsilon = 1e-12);
            assert!((d - 3.9).abs() < 0.6);
        }
    }

    #[test]
    fn same_seed_same_episode() {
        let run = |seed| {
            let cfg = EnvConfig { record_trace: true, ..Default::default() };
            let (mut env, _) = Env::reset(&cfg, &ThrowerConfig::default(), seed).unwrap();
            let cmd = JointVector::from_element(0.3);
            while !env.is_done() {
                env.step(&cmd).unwrap();
            }
            serde_json::to_string(&env.result()).unwrap()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn velocity_tracking_clamp() {
        let (mut env, _) = Env::reset(&quiet(), &ThrowerConfig::default(), 0).unwrap();
        let mut cmd = JointVector::zeros();
        cmd[1] = 10.0;
        env.step(&cmd).unwrap();
        assert_eq!(env.qd[1], 25.0 * env.cfg.control_dt);
        assert_abs_diff_eq!(env.qd[1], 25.0 / 75.0, epsilon = 1e-15);
        let (q, qd) = env.joint_state();
        env.step(&qd).unwrap();
        assert_eq!(env.qd, qd);
        assert_abs_diff_eq!((env.q - q).norm(), (qd / 75.0).norm(), epsilon = 1e-15);
    }

    #[test]
    fn idle_robot_misses_and_episode_ends() {
        let cfg = EnvConfig { episode_horizon: 5.0, ..quiet() };
        let thrower = ThrowerConfig::with_yaw(5.0, 6.0);
        let (mut env, _) = Env::reset(&cfg, &thrower, 1).unwrap();
        let mut steps = 0;
        while !env.is_done() {
            env.step(&JointVector::zeros()).unwrap();
            steps += 1;
        }
        assert!(env.ball.p.z < 0.0);
        assert!(steps < 5 * 75);
        assert!(!env.result().caught);
        assert_eq!(env.step(&JointVector::zeros()), Err(SimError::EpisodeOver));
    }

    #[test]
    fn energy_conserved_in_flight() {
        let (mut env, _) = Env::reset(&quiet(), &ThrowerConfig::with_yaw(5.0, 6.0), 2).unwrap();
        let g = FlightModel::new(env.cfg.gravity);
        for _ in 0..40 {
            let (p, v) = env.ball_state();
            let before = g.specific_energy(&p, &v);
            env.step(&JointVector::zeros()).unwrap();
            let (p, v) = env.ball_state();
            assert!((g.specific_energy(&p, &v) - before).abs() < 1e-8);
        }
    }

    #[test]
    fn acceleration_clamp_is_never_exceeded() {
        let (mut env, _) = Env::reset(&EnvConfig::default(), &ThrowerConfig::default(), 3).unwrap();
        let mut k = 0.0;
        while !env.is_done() {
            let before = env.qd;
            let cmd = JointVector::from_fn(|i, _| 8.0 * ((k + i as f64) * 0.7).sin() + 6.0 * (k * 0.05).sin());
            env.step(&cmd).unwrap();
            for i in 0..DOF {
                let a = env.cfg.limits.accel[i] / 75.0;
                assert!((env.qd[i] - before[i]).abs() <= a * (1.0 + 1e-12));
            }
            k += 1.0;
        }
        assert!(env.result().constraint_violated);
    }

    #[test]
    fn observation_shapes_and_padding() {
        let (mut env, obs) = Env::reset(&quiet(), &ThrowerConfig::default(), 4).unwrap();
        assert_eq!(obs.joint_history.shape(), (8, 7));
        assert_eq!(obs.predicted_ball.shape(), (12, 6));
        assert!(obs.ball_estimate.is_none());
        let mut cmd = JointVector::zeros();
        cmd[0] = 1.0;
        let (obs, _) = env.step(&cmd).unwrap();
        assert!(obs.joint_history.rows(0, 7).iter().all(|v| *v == 0.0));
        assert!(obs.joint_history[(7, 0)] > 0.0);
        assert_eq!(obs.predicted_ball.shape(), (12, 6));
    }

    #[test]
    fn noiseless_prediction_matches_truth() {
        let (mut env, _) = Env::reset(&quiet(), &ThrowerConfig::default(), 5).unwrap();
        let mut obs = None;
        for _ in 0..10 {
            obs = Some(env.step(&JointVector::zeros()).unwrap().0);
        }
        let obs = obs.unwrap();
        let (p, v) = env.ball_state();
        for a in 0..3 {
            assert!((obs.predicted_ball[(0, a)] - p[a]).abs() < 1e-6);
            assert!((obs.predicted_ball[(0, 3 + a)] - v[a]).abs() < 1e-6);
        }
    }

    #[test]
    fn matched_ball_in_net_is_caught() {
        let (mut env, _) = Env::reset(&quiet(), &ThrowerConfig::default(), 0).unwrap();
        let f = env.net_frame(&env.q, &env.qd);
        env.ball = Ball { p: f.center + f.opening() * 0.03, v: Vector3::zeros(), contained: true };
        // Opening faces -y at home, so gravity is switched off to keep it centered.
        env.cfg.gravity = 1e-9;
        assert_eq!(env.detect_catch(), NetContact::InNet);
        for _ in 0..20 {
            env.step(&JointVector::zeros()).unwrap();
        }
        assert!(env.caught());
        assert_eq!(env.result().catch_side, Some(Side::Right));
        assert_eq!(env.result().reward_terms.catch, 1.0);
        assert!(rewards::held_in_net(env.reward_trace(), env.cfg.catch_hold_time));
    }

    #[test]
    fn far_ball_is_not_in_net() {
        let (mut env, _) = Env::reset(&quiet(), &ThrowerConfig::default(), 0).unwrap();
        let f = env.net_frame(&env.q, &env.qd);
        env.ball.p = f.center + Vector3::new(0.5, 0.0, 0.0);
        env.ball.v = f.velocity;
        assert_eq!(env.detect_catch(), NetContact::NotInNet);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = EnvConfig { n_hist: 0, ..Default::default() };
        assert!(matches!(Env::reset(&cfg, &ThrowerConfig::default(), 0), Err(SimError::ConfigInvalid(_))));
        let cfg = EnvConfig { control_dt: 0.0, ..Default::default() };
        assert!(matches!(Env::reset(&cfg, &ThrowerConfig::default(), 0), Err(SimError::ConfigInvalid(_))));
    }
}
