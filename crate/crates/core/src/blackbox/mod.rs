//! Two-tower policy network and its blackbox gradient-sensing trainer.

mod bgs;
mod policy;
pub mod toy;

pub use bgs::{
    centered_ranks, curve_csv, episode_seed, estimate_gradient, finetune, perturbation, train, update_direction, BgsConfig,
    Checkpoint, EstimatorParams, FinetuneReport, GradientEstimate, LearningPoint, Normalization, Objective, Rollout,
    CHECKPOINT_VERSION,
};
pub use policy::{layers_param_count, param_count, policy_forward, LayerShape, ParamBlock, Policy, PolicyArchitecture};

use thiserror::Error;

use crate::rewards::RewardMode;
use crate::sim::{Env, EnvConfig, ThrowerConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BlackboxError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("invalid optimizer config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(String),
}

/// Episode return of the policy in the catching simulator.
#[derive(Debug, Clone)]
pub struct CatchObjective {
    pub env: EnvConfig,
    pub thrower: ThrowerConfig,
    pub arch: PolicyArchitecture,
    pub mode: RewardMode,
}

impl CatchObjective {
    pub fn new(env: EnvConfig, thrower: ThrowerConfig, arch: PolicyArchitecture, mode: RewardMode) -> Result<Self, BlackboxError> {
        env.validate().map_err(|e| BlackboxError::Config(e.to_string()))?;
        thrower.validate().map_err(BlackboxError::Config)?;
        arch.validate()?;
        if arch.n_hist != env.n_hist || arch.n_pred != env.n_pred {
            return Err(BlackboxError::ShapeMismatch("architecture and env disagree on n_hist/n_pred".into()));
        }
        Ok(Self { env, thrower, arch, mode })
    }
}

impl Objective for CatchObjective {
    fn dim(&self) -> usize {
        self.arch.param_count()
    }

    fn evaluate(&self, theta: &[f64], episode_seed: u64) -> Rollout {
        let (mut env, mut obs) = Env::reset(&self.env, &self.thrower, episode_seed).expect("validated configs");
        while !env.is_done() {
            let cmd = policy_forward(&self.arch, theta, &obs, &self.env.limits).expect("validated shapes");
            obs = env.step(&cmd).expect("episode running").0;
        }
        let result = env.result();
        Rollout { reward: result.total(self.mode, &self.env.reward), success: result.caught }
    }

    fn architecture(&self) -> Option<PolicyArchitecture> {
        Some(self.arch.clone())
    }
}
