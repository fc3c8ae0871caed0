//! Runnable agents behind one interface, stepped once per control tick.

mod bb;
mod snapshot;
mod sqp;

pub use bb::BbAgent;
pub use snapshot::{PlanSnapshot, SnapshotCell};
pub use sqp::{shift_controls, PlanOutcome, PlanRequest, Planner, SqpAgent, SqpAgentConfig, SqpPlanner};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blackbox::{BlackboxError, Policy};
use crate::kinematics::JointVector;
use crate::sim::{EnvConfig, EpisodeResult, Env, Observation, SimError, ThrowerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Intercept,
    Cradle,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentCommand {
    pub qd_cmd: JointVector,
    pub phase: Phase,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("agent `{0}` needs a policy checkpoint")]
    MissingCheckpoint(String),
    #[error(transparent)]
    Policy(#[from] BlackboxError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

pub trait Agent: Send {
    fn name(&self) -> &'static str;
    /// Clears all per-episode state.
    fn reset(&mut self);
    fn act(&mut self, obs: &Observation) -> Result<AgentCommand, AgentError>;
}

/// What a factory may draw on to build an agent.
#[derive(Debug, Clone, Copy)]
pub struct AgentContext<'a> {
    pub env: &'a EnvConfig,
    pub sqp: &'a SqpAgentConfig,
    pub policy: Option<&'a Policy>,
}

pub type AgentFactory = fn(&AgentContext<'_>) -> Result<Box<dyn Agent>, AgentError>;

/// Agents by name.
#[derive(Debug, Clone)]
pub struct AgentRegistry {
    entries: BTreeMap<&'static str, AgentFactory>,
}

impl Default for AgentRegistry {
    fn default() -> Self {
        let mut registry = Self { entries: BTreeMap::new() };
        registry.register("sqp", |ctx| Ok(Box::new(SqpAgent::new(ctx.sqp.clone(), ctx.env))));
        registry.register("bb", |ctx| {
            let policy = ctx.policy.ok_or_else(|| AgentError::MissingCheckpoint("bb".into()))?;
            Ok(Box::new(BbAgent::new(policy.clone(), ctx.env)?))
        });
        registry
    }
}

impl AgentRegistry {
    pub fn register(&mut self, name: &'static str, factory: AgentFactory) {
        self.entries.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn create(&self, name: &str, ctx: &AgentContext<'_>) -> Result<Box<dyn Agent>, AgentError> {
        let factory = self.entries.get(name).ok_or_else(|| AgentError::UnknownAgent(name.to_string()))?;
        factory(ctx)
    }
}

/// Steps one seeded episode to completion.
pub fn run_episode(env_cfg: &EnvConfig, thrower: &ThrowerConfig, seed: u64, agent: &mut dyn Agent) -> Result<EpisodeResult, AgentError> {
    let (mut env, mut obs) = Env::reset(env_cfg, thrower, seed)?;
    agent.reset();
    while !env.is_done() {
        let cmd = agent.act(&obs)?;
        obs = env.step(&cmd.qd_cmd)?.0;
    }
    Ok(env.result())
}
