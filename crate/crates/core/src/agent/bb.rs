use crate::blackbox::Policy;
use crate::sim::{EnvConfig, Observation};
use crate::stage_ocp::Limits;

use super::{Agent, AgentCommand, AgentError, Phase};

/// Policy-network agent. The network decides its own post-catch motion, so
/// the phase never leaves `Intercept`.
#[derive(Debug, Clone)]
pub struct BbAgent {
    policy: Policy,
    limits: Limits,
}

impl BbAgent {
    pub fn new(policy: Policy, env: &EnvConfig) -> Result<Self, AgentError> {
        if policy.arch.n_hist != env.n_hist || policy.arch.n_pred != env.n_pred {
            return Err(AgentError::Policy(crate::blackbox::BlackboxError::ShapeMismatch(
                "policy and env disagree on n_hist/n_pred".into(),
            )));
        }
        Ok(Self { policy, limits: env.limits.clone() })
    }
}

impl Agent for BbAgent {
    fn name(&self) -> &'static str {
        "bb"
    }

    fn reset(&mut self) {}

    fn act(&mut self, obs: &Observation) -> Result<AgentCommand, AgentError> {
        let qd_cmd = self.policy.forward(obs, &self.limits)?;
        Ok(AgentCommand { qd_cmd, phase: Phase::Intercept })
    }
}
