use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::SqpAgentConfig;
use crate::blackbox::{BgsConfig, PolicyArchitecture};
use crate::rewards::RewardMode;
use crate::sim::{EnvConfig, ThrowerConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Read(String),
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("bad override `{0}`: expected key.path=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Parameter shift applied to the training setup for transfer experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftConfig {
    /// Multiplier on the simulated gravity; the predictor keeps its own.
    pub gravity_scale: f64,
    pub speed_jitter: f64,
    pub obs_noise_std: f64,
    pub tracking_lag: f64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self { gravity_scale: 1.02, speed_jitter: 0.1, obs_noise_std: 0.008, tracking_lag: 0.02 }
    }
}

impl ShiftConfig {
    pub fn apply(&self, env: &EnvConfig, thrower: &ThrowerConfig) -> (EnvConfig, ThrowerConfig) {
        let env = EnvConfig {
            gravity: env.gravity * self.gravity_scale,
            obs_noise_std: self.obs_noise_std,
            tracking_lag: self.tracking_lag,
            ..env.clone()
        };
        let thrower = ThrowerConfig { speed_jitter: self.speed_jitter, ..thrower.clone() };
        (env, thrower)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub bgs: BgsConfig,
    pub reward_mode: RewardMode,
    pub shift: ShiftConfig,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            bgs: BgsConfig {
                perturbations_per_step: 15,
                rollouts_per_perturbation: 1,
                iterations: 50,
                checkpoint_every: 0,
                ..BgsConfig::default()
            },
            reward_mode: RewardMode::RealAnalog,
            shift: ShiftConfig::default(),
        }
    }
}

/// Top-level experiment configuration, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Episodes per evaluation condition.
    pub episodes: usize,
    pub output_dir: PathBuf,
    /// Policy checkpoint used by `bb` evaluations.
    pub checkpoint: Option<PathBuf>,
    pub env: EnvConfig,
    pub thrower: ThrowerConfig,
    pub sqp: SqpAgentConfig,
    pub policy: PolicyArchitecture,
    pub bgs: BgsConfig,
    pub finetune: FinetuneConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            episodes: 200,
            output_dir: PathBuf::from("results"),
            checkpoint: None,
            env: EnvConfig::default(),
            thrower: ThrowerConfig::default(),
            sqp: SqpAgentConfig::default(),
            policy: PolicyArchitecture::default(),
            bgs: BgsConfig::default(),
            finetune: FinetuneConfig::default(),
        }
    }
}

impl Config {
    /// Parses TOML text, then applies `key.path=value` overrides in order.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut root: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let cfg: Config = toml::Value::Table(root).try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| ConfigError::Read(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: String| ConfigError::Invalid(e);
        if self.episodes < 1 {
            return Err(invalid("episodes must be at least 1".into()));
        }
        self.env.validate().map_err(|e| invalid(e.to_string()))?;
        self.thrower.validate().map_err(|e| invalid(format!("thrower: {e}")))?;
        self.policy.validate().map_err(|e| invalid(e.to_string()))?;
        if self.policy.n_hist != self.env.n_hist || self.policy.n_pred != self.env.n_pred {
            return Err(invalid("policy and env disagree on n_hist/n_pred".into()));
        }
        self.bgs.validate().map_err(|e| invalid(e.to_string()))?;
        self.finetune.bgs.validate().map_err(|e| invalid(format!("finetune: {e}")))?;
        if !(self.finetune.shift.gravity_scale > 0.0) {
            return Err(invalid("finetune.shift.gravity_scale must be positive".into()));
        }
        Ok(())
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `key.path=value` in a TOML table. Values are parsed as TOML and fall
/// back to a bare string.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let bad = || ConfigError::Override(assignment.to_string());
    let (path, raw) = assignment.split_once('=').ok_or_else(bad)?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(bad());
    }
    let (last, parents) = keys.split_last().expect("nonempty");
    let mut table = root;
    for key in parents {
        let entry = table.entry(key.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(bad)?;
    }
    table.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}
