//! Episode reward terms for policy training.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// position + orientation + stability + constraint penalty
    Sim,
    /// position + catch + binary fault penalty
    RealAnalog,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TermWeights {
    pub position: f64,
    pub orientation: f64,
    pub stability: f64,
    pub catch: f64,
    pub constraint: f64,
    pub fault: f64,
}

impl Default for TermWeights {
    fn default() -> Self {
        Self { position: 1.0, orientation: 1.0, stability: 1.0, catch: 1.0, constraint: 1.0, fault: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub close_cutoff: f64,
    pub position_decay_rate: f64,
    pub stability_window: f64,
    pub stability_speed_cap: f64,
    pub stability_decay_rate: f64,
    pub stability_flat: f64,
    pub stability_scaled: f64,
    /// Integrated relative violation (joint-seconds) that zeroes the
    /// constraint term.
    pub violation_budget: f64,
    pub term_weights: TermWeights,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            close_cutoff: 0.20,
            position_decay_rate: 5.0,
            stability_window: 0.25,
            stability_speed_cap: 0.2,
            stability_decay_rate: 20.0,
            stability_flat: 0.2,
            stability_scaled: 0.8,
            violation_budget: 0.05,
            term_weights: TermWeights::default(),
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        let w = &self.term_weights;
        let values = [
            self.close_cutoff,
            self.position_decay_rate,
            self.stability_window,
            self.stability_speed_cap,
            self.stability_decay_rate,
            self.stability_flat,
            self.stability_scaled,
            w.position,
            w.orientation,
            w.stability,
            w.catch,
            w.constraint,
            w.fault,
        ];
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err("reward parameters must be nonnegative".into());
        }
        if !(self.violation_budget > 0.0) {
            return Err("violation_budget must be positive".into());
        }
        if (self.stability_flat + self.stability_scaled - 1.0).abs() > 1e-12 {
            return Err("stability_flat + stability_scaled must equal 1".into());
        }
        Ok(())
    }
}

/// Per-control-step quantities the reward terms are computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub dt: f64,
    /// Net-center to ball distance at the end of the step.
    pub distance: f64,
    /// Ball speed relative to the net at the ball's position.
    pub relative_speed: f64,
    /// `v_ball_hat . y_net`.
    pub alignment: f64,
    pub in_net: bool,
    /// Relative limit excess per joint during the step.
    pub violations: Vec<f64>,
}

pub fn position_reward(min_distance: f64, cfg: &RewardConfig) -> f64 {
    if min_distance <= cfg.close_cutoff {
        1.0
    } else {
        (-cfg.position_decay_rate * (min_distance - cfg.close_cutoff)).exp()
    }
}

/// `(1 + v.y) / 2` for unit ball direction `v` and net axis `y`.
pub fn orientation_reward(v_hat: &Vector3<f64>, y_net: &Vector3<f64>) -> f64 {
    alignment_score(v_hat.dot(y_net))
}

fn alignment_score(alignment: f64) -> f64 {
    ((1.0 + alignment) / 2.0).clamp(0.0, 1.0)
}

/// Orientation score at the first close step, 0 if never close.
pub fn first_close_orientation(trace: &[StepTrace], cfg: &RewardConfig) -> f64 {
    trace
        .iter()
        .find(|s| s.distance <= cfg.close_cutoff)
        .map_or(0.0, |s| alignment_score(s.alignment))
}

pub fn stability_step_score(speed: f64, cfg: &RewardConfig) -> f64 {
    if speed <= cfg.stability_speed_cap {
        1.0
    } else {
        (-cfg.stability_decay_rate * (speed - cfg.stability_speed_cap)).exp()
    }
}

/// Flat part for entering the close region and staying there to the end;
/// scaled part averages per-step speed scores over the window that starts at
/// first closeness. Steps in the window that are not close, or fall after the
/// episode end, score 0.
pub fn stability_reward(trace: &[StepTrace], cfg: &RewardConfig) -> f64 {
    let Some(first) = trace.iter().position(|s| s.distance <= cfg.close_cutoff) else {
        return 0.0;
    };
    let stayed = trace[first..].iter().all(|s| s.distance <= cfg.close_cutoff);
    let dt = trace[first].dt;
    let window = ((cfg.stability_window / dt) - 1e-9).ceil().max(1.0) as usize;
    let sum: f64 = trace[first..]
        .iter()
        .take(window)
        .filter(|s| s.distance <= cfg.close_cutoff)
        .map(|s| stability_step_score(s.relative_speed, cfg))
        .sum();
    let flat = if stayed { cfg.stability_flat } else { 0.0 };
    flat + cfg.stability_scaled * sum / window as f64
}

/// Whether the in-net flag was continuously set for longer than `hold_time`.
pub fn held_in_net(trace: &[StepTrace], hold_time: f64) -> bool {
    let mut run = 0.0;
    for s in trace {
        if s.in_net {
            run += s.dt;
            if run > hold_time - 1e-9 {
                return true;
            }
        } else {
            run = 0.0;
        }
    }
    false
}

pub fn catch_reward(caught: bool) -> f64 {
    if caught {
        1.0
    } else {
        0.0
    }
}

/// Integrated relative violation in joint-seconds.
pub fn integrated_violation(trace: &[StepTrace]) -> f64 {
    trace.iter().map(|s| s.violations.iter().sum::<f64>() * s.dt).sum()
}

pub fn constraint_penalty(trace: &[StepTrace], cfg: &RewardConfig) -> f64 {
    1.0 - (integrated_violation(trace) / cfg.violation_budget).min(1.0)
}

pub fn fault_penalty(trace: &[StepTrace]) -> f64 {
    if integrated_violation(trace) > 0.0 {
        0.0
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardTerms {
    pub position: f64,
    pub orientation: f64,
    pub stability: f64,
    pub catch: f64,
    pub constraint: f64,
    pub fault: f64,
}

impl RewardTerms {
    pub fn compute(min_distance: f64, caught: bool, trace: &[StepTrace], cfg: &RewardConfig) -> Self {
        Self {
            position: position_reward(min_distance, cfg),
            orientation: first_close_orientation(trace, cfg),
            stability: stability_reward(trace, cfg),
            catch: catch_reward(caught),
            constraint: constraint_penalty(trace, cfg),
            fault: fault_penalty(trace),
        }
    }

    pub fn total(&self, mode: RewardMode, cfg: &RewardConfig) -> f64 {
        let w = &cfg.term_weights;
        match mode {
            RewardMode::Sim => {
                w.position * self.position
                    + w.orientation * self.orientation
                    + w.stability * self.stability
                    + w.constraint * self.constraint
            }
            RewardMode::RealAnalog => w.position * self.position + w.catch * self.catch + w.fault * self.fault,
        }
    }
}
