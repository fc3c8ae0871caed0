//! Evaluation runs, suites and result files.

mod config;
mod stats;
mod suites;

pub use config::{apply_override, Config, ConfigError, FinetuneConfig, ShiftConfig};
pub use stats::{clopper_pearson, entropy_bits, StatsError};
pub use suites::{
    in_training_band, shifted_env, yaw_grid, Suite, SuiteContext, SuiteRegistry, SuiteReport, SPEED_CONDITIONS,
    TRAINING_YAW_BAND, YAW_BAND_HALF_WIDTH, YAW_SWEEP_POINTS, YAW_SWEEP_RANGE,
};

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{run_episode, AgentContext, AgentError, AgentRegistry, SqpAgentConfig};
use crate::blackbox::{BlackboxError, Policy};
use crate::sim::{EnvConfig, EpisodeResult, Side, ThrowerConfig};

pub const CSV_HEADER: &str = "condition,agent,successes,trials,rate,ci_lo,ci_hi,mean_min_dist,left_catches,right_catches";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("agent `{0}` needs a policy checkpoint")]
    MissingCheckpoint(String),
    #[error("unknown suite `{0}`")]
    UnknownSuite(String),
    #[error(transparent)]
    Agent(AgentError),
    #[error(transparent)]
    Blackbox(#[from] BlackboxError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("io: {0}")]
    Io(String),
}

impl From<AgentError> for HarnessError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::MissingCheckpoint(name) => HarnessError::MissingCheckpoint(name),
            other => HarnessError::Agent(other),
        }
    }
}

/// One evaluation condition.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub condition: String,
    pub agent: String,
    pub env: EnvConfig,
    pub thrower: ThrowerConfig,
    pub sqp: SqpAgentConfig,
    pub policy: Option<Policy>,
    pub episodes: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatchRateRow {
    pub condition: String,
    pub agent: String,
    pub successes: u64,
    pub trials: u64,
    pub rate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub mean_min_dist: f64,
    pub left_catches: u64,
    pub right_catches: u64,
}

impl CatchRateRow {
    pub fn from_results(condition: &str, agent: &str, results: &[EpisodeResult]) -> Result<Self, StatsError> {
        let trials = results.len() as u64;
        let successes = results.iter().filter(|r| r.caught).count() as u64;
        let (ci_lo, ci_hi) = clopper_pearson(successes, trials, 0.95)?;
        let side = |s| results.iter().filter(|r| r.catch_side == Some(s)).count() as u64;
        Ok(Self {
            condition: condition.to_string(),
            agent: agent.to_string(),
            successes,
            trials,
            rate: successes as f64 / trials as f64,
            ci_lo,
            ci_hi,
            mean_min_dist: results.iter().map(|r| r.min_net_ball_distance).sum::<f64>() / trials as f64,
            left_catches: side(Side::Left),
            right_catches: side(Side::Right),
        })
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{},{}",
            self.condition,
            self.agent,
            self.successes,
            self.trials,
            self.rate,
            self.ci_lo,
            self.ci_hi,
            self.mean_min_dist,
            self.left_catches,
            self.right_catches
        )
    }

    /// Left share of all catches, `None` without catches.
    pub fn left_fraction(&self) -> Option<f64> {
        let total = self.left_catches + self.right_catches;
        (total > 0).then(|| self.left_catches as f64 / total as f64)
    }

    pub fn side_entropy(&self) -> f64 {
        entropy_bits(&[self.left_catches, self.right_catches])
    }
}

pub fn rows_csv(rows: &[CatchRateRow]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for row in rows {
        out.push_str(&row.csv_line());
        out.push('\n');
    }
    out
}

/// Parses a results CSV written by [`rows_csv`].
pub fn parse_rows_csv(text: &str) -> Result<Vec<CatchRateRow>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err("unexpected CSV header".into());
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 10 {
                return Err(format!("expected 10 fields in `{line}`"));
            }
            let int = |s: &str| s.parse::<u64>().map_err(|e| e.to_string());
            let float = |s: &str| s.parse::<f64>().map_err(|e| e.to_string());
            Ok(CatchRateRow {
                condition: f[0].to_string(),
                agent: f[1].to_string(),
                successes: int(f[2])?,
                trials: int(f[3])?,
                rate: float(f[4])?,
                ci_lo: float(f[5])?,
                ci_hi: float(f[6])?,
                mean_min_dist: float(f[7])?,
                left_catches: int(f[8])?,
                right_catches: int(f[9])?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub result: EpisodeResult,
}

/// JSON log of one evaluation condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalLog {
    pub version: u32,
    pub condition: String,
    pub agent: String,
    pub env: EnvConfig,
    pub thrower: ThrowerConfig,
    pub base_seed: u64,
    pub episodes: Vec<EpisodeRecord>,
}

impl EvalLog {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("log serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub row: CatchRateRow,
    pub log: EvalLog,
}

/// Seed of episode `index` in a run with `base`.
pub fn eval_seed(base: u64, index: usize) -> u64 {
    base.wrapping_mul(1_000_003).wrapping_add(index as u64)
}

pub fn run_eval(spec: &ExperimentSpec, registry: &AgentRegistry) -> Result<EvalOutcome, HarnessError> {
    if spec.episodes < 1 {
        return Err(ConfigError::Invalid("episodes must be at least 1".into()).into());
    }
    spec.env.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    spec.thrower.validate().map_err(ConfigError::Invalid)?;
    let ctx = AgentContext { env: &spec.env, sqp: &spec.sqp, policy: spec.policy.as_ref() };
    // Fail fast on a missing checkpoint before spawning work.
    drop(registry.create(&spec.agent, &ctx)?);
    let results: Result<Vec<EpisodeResult>, AgentError> = (0..spec.episodes)
        .into_par_iter()
        .map(|i| {
            let mut agent = registry.create(&spec.agent, &ctx)?;
            run_episode(&spec.env, &spec.thrower, eval_seed(spec.seed, i), agent.as_mut())
        })
        .collect();
    let results = results?;
    let row = CatchRateRow::from_results(&spec.condition, &spec.agent, &results)?;
    log::info!("{} {}: {}/{} caught", spec.condition, spec.agent, row.successes, row.trials);
    let episodes = results
        .into_iter()
        .enumerate()
        .map(|(i, result)| EpisodeRecord { seed: eval_seed(spec.seed, i), result })
        .collect();
    let log = EvalLog {
        version: LOG_VERSION,
        condition: spec.condition.clone(),
        agent: spec.agent.clone(),
        env: spec.env.clone(),
        thrower: spec.thrower.clone(),
        base_seed: spec.seed,
        episodes,
    };
    Ok(EvalOutcome { row, log })
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(episodes: usize) -> ExperimentSpec {
        ExperimentSpec {
            condition: "training".into(),
            agent: "sqp".into(),
            env: EnvConfig::default(),
            thrower: ThrowerConfig::default(),
            sqp: SqpAgentConfig::default(),
            policy: None,
            episodes,
            seed: 4,
        }
    }

    #[test]
    fn single_caught_episode_interval() {
        let out = run_eval(&spec(1), &AgentRegistry::default()).unwrap();
        assert_eq!(out.row.successes, 1);
        assert_eq!(out.row.rate, 1.0);
        assert!((out.row.ci_lo - 0.025).abs() < 1e-12);
        assert_eq!(out.row.ci_hi, 1.0);
    }

    #[test]
    fn repeat_runs_are_identical() {
        let a = run_eval(&spec(6), &AgentRegistry::default()).unwrap();
        let b = run_eval(&spec(6), &AgentRegistry::default()).unwrap();
        assert_eq!(rows_csv(std::slice::from_ref(&a.row)), rows_csv(&[b.row]));
        assert_eq!(a.log.to_json(), b.log.to_json());
        let back = EvalLog::from_json(&a.log.to_json()).unwrap();
        assert_eq!(back.episodes, a.log.episodes);
        assert_eq!(parse_rows_csv(&rows_csv(std::slice::from_ref(&a.row))).unwrap()[0].successes, a.row.successes);
    }

    #[test]
    fn bb_without_checkpoint_fails() {
        let s = ExperimentSpec { agent: "bb".into(), ..spec(2) };
        assert!(matches!(run_eval(&s, &AgentRegistry::default()), Err(HarnessError::MissingCheckpoint(_))));
    }
}
