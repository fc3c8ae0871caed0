use std::collections::BTreeMap;
use std::path::Path;

use crate::agent::AgentRegistry;
use crate::blackbox::{finetune, CatchObjective, Checkpoint, FinetuneReport, Policy};
use crate::sim::{EnvConfig, ThrowerConfig};

use super::{rows_csv, run_eval, write_file, CatchRateRow, Config, EvalLog, ExperimentSpec, HarnessError};

pub const TRAINING_YAW_BAND: [f64; 2] = [-6.0, 6.3];
pub const YAW_SWEEP_RANGE: [f64; 2] = [-9.5, 8.0];
pub const YAW_SWEEP_POINTS: usize = 8;
/// Half-width in degrees of the yaw interval thrown at each grid point.
pub const YAW_BAND_HALF_WIDTH: f64 = 0.25;
pub const SPEED_CONDITIONS: [(&str, f64); 3] = [("slower", 4.1), ("training", 4.5), ("faster", 4.7)];

/// `n` evenly spaced yaw angles covering `YAW_SWEEP_RANGE` end to end.
pub fn yaw_grid(n: usize) -> Vec<f64> {
    let [lo, hi] = YAW_SWEEP_RANGE;
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect(),
    }
}

pub fn in_training_band(yaw: f64) -> bool {
    (TRAINING_YAW_BAND[0]..=TRAINING_YAW_BAND[1]).contains(&yaw)
}

/// Shifted-parameter env and thrower used for transfer runs.
pub fn shifted_env(cfg: &Config) -> (EnvConfig, ThrowerConfig) {
    cfg.finetune.shift.apply(&cfg.env, &cfg.thrower)
}

pub struct SuiteContext<'a> {
    pub config: &'a Config,
    pub checkpoint: Option<&'a Checkpoint>,
    pub agents: &'a AgentRegistry,
    /// Where finetune checkpoints go, if anywhere.
    pub out_dir: Option<&'a Path>,
}

impl SuiteContext<'_> {
    pub fn policy(&self) -> Result<Option<Policy>, HarnessError> {
        let Some(ckpt) = self.checkpoint else { return Ok(None) };
        let arch = ckpt.arch.clone().unwrap_or_else(|| self.config.policy.clone());
        Ok(Some(Policy::new(arch, ckpt.theta.clone())?))
    }

    fn require_policy(&self) -> Result<Policy, HarnessError> {
        self.policy()?.ok_or_else(|| HarnessError::MissingCheckpoint("bb".into()))
    }

    fn spec(&self, condition: &str, agent: &str, env: &EnvConfig, thrower: ThrowerConfig, policy: Option<&Policy>) -> ExperimentSpec {
        ExperimentSpec {
            condition: condition.to_string(),
            agent: agent.to_string(),
            env: env.clone(),
            thrower,
            sqp: self.config.sqp.clone(),
            policy: policy.cloned(),
            episodes: self.config.episodes,
            seed: self.config.seed,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SuiteReport {
    pub suite: String,
    pub rows: Vec<CatchRateRow>,
    pub logs: Vec<EvalLog>,
    /// Extra `key value` lines printed after the table.
    pub summary: Vec<(String, f64)>,
    pub finetune: Option<FinetuneReport>,
}

impl SuiteReport {
    fn new(suite: &str) -> Self {
        Self { suite: suite.to_string(), ..Self::default() }
    }

    fn run(&mut self, spec: &ExperimentSpec, agents: &AgentRegistry) -> Result<CatchRateRow, HarnessError> {
        let out = run_eval(spec, agents)?;
        self.rows.push(out.row.clone());
        self.logs.push(out.log);
        Ok(out.row)
    }

    pub fn row(&self, condition: &str, agent: &str) -> Option<&CatchRateRow> {
        self.rows.iter().find(|r| r.condition == condition && r.agent == agent)
    }

    pub fn summary_text(&self) -> String {
        self.summary.iter().map(|(k, v)| format!("{k} {v:.6}\n")).collect()
    }

    /// Writes `<suite>.csv`, the summary and one JSON log per condition.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        write_file(&dir.join(format!("{}.csv", self.suite)), &rows_csv(&self.rows))?;
        if !self.summary.is_empty() {
            write_file(&dir.join(format!("{}_summary.txt", self.suite)), &self.summary_text())?;
        }
        for log in &self.logs {
            let name = format!("{}_{}.json", log.condition, log.agent);
            write_file(&dir.join(&self.suite).join(name), &log.to_json())?;
        }
        if let Some(ft) = &self.finetune {
            write_file(&dir.join(&self.suite).join("finetune_curve.csv"), &crate::blackbox::curve_csv(&ft.curve))?;
            let v = format!("iteration_variance {:.6}\n", ft.iteration_variance);
            write_file(&dir.join(&self.suite).join("finetune_variance.txt"), &v)?;
        }
        Ok(())
    }
}

pub trait Suite: Send + Sync {
    fn name(&self) -> &'static str;
    fn run(&self, ctx: &SuiteContext<'_>) -> Result<SuiteReport, HarnessError>;
}

struct SpeedShift;

impl Suite for SpeedShift {
    fn name(&self) -> &'static str {
        "speed_shift"
    }

    fn run(&self, ctx: &SuiteContext<'_>) -> Result<SuiteReport, HarnessError> {
        let policy = ctx.require_policy()?;
        let mut report = SuiteReport::new(self.name());
        for (label, speed) in SPEED_CONDITIONS {
            let thrower = ThrowerConfig { speed_mean: speed, ..ctx.config.thrower.clone() };
            let condition = format!("{label}_{speed:.1}");
            for agent in ["sqp", "bb"] {
                report.run(&ctx.spec(&condition, agent, &ctx.config.env, thrower.clone(), Some(&policy)), ctx.agents)?;
            }
        }
        Ok(report)
    }
}

struct YawSweep;

impl Suite for YawSweep {
    fn name(&self) -> &'static str {
        "yaw_sweep"
    }

    fn run(&self, ctx: &SuiteContext<'_>) -> Result<SuiteReport, HarnessError> {
        let policy = ctx.require_policy()?;
        let mut report = SuiteReport::new(self.name());
        let mut pooled: BTreeMap<(&str, &str), Vec<_>> = BTreeMap::new();
        for yaw in yaw_grid(YAW_SWEEP_POINTS) {
            let band = if in_training_band(yaw) { "in_band" } else { "out_of_band" };
            let thrower = ThrowerConfig {
                yaw_range: [yaw - YAW_BAND_HALF_WIDTH, yaw + YAW_BAND_HALF_WIDTH],
                yaw_exclude: None,
                ..ctx.config.thrower.clone()
            };
            let condition = format!("yaw_{yaw:.2}_{band}");
            for agent in ["sqp", "bb"] {
                let out = run_eval(&ctx.spec(&condition, agent, &ctx.config.env, thrower.clone(), Some(&policy)), ctx.agents)?;
                pooled.entry((band, agent)).or_default().extend(out.log.episodes.iter().map(|e| e.result.clone()));
                report.rows.push(out.row);
                report.logs.push(out.log);
            }
        }
        for band in ["in_band", "out_of_band"] {
            for agent in ["sqp", "bb"] {
                let results = &pooled[&(band, agent)];
                report.rows.push(CatchRateRow::from_results(band, agent, results)?);
            }
        }
        for agent in ["sqp", "bb"] {
            let drop = report.row("in_band", agent).map(|r| r.rate).unwrap_or(0.0)
                - report.row("out_of_band", agent).map(|r| r.rate).unwrap_or(0.0);
            report.summary.push((format!("{agent}_band_drop"), drop));
        }
        Ok(report)
    }
}

struct Multimodality;

impl Suite for Multimodality {
    fn name(&self) -> &'static str {
        "multimodality"
    }

    fn run(&self, ctx: &SuiteContext<'_>) -> Result<SuiteReport, HarnessError> {
        let policy = ctx.policy()?;
        let mut report = SuiteReport::new(self.name());
        let thrower = ctx.config.thrower.clone();
        report.summary.push(("thrower_left_fraction".into(), 1.0 - thrower.right_bias));
        let mut agents = vec!["sqp"];
        if policy.is_some() {
            agents.push("bb");
        }
        for agent in agents {
            let row = report.run(&ctx.spec("training", agent, &ctx.config.env, thrower.clone(), policy.as_ref()), ctx.agents)?;
            if let Some(f) = row.left_fraction() {
                report.summary.push((format!("{agent}_left_fraction"), f));
            }
            report.summary.push((format!("{agent}_side_entropy_bits"), row.side_entropy()));
        }
        Ok(report)
    }
}

struct Sim2SimTransfer;

impl Suite for Sim2SimTransfer {
    fn name(&self) -> &'static str {
        "sim2sim_transfer"
    }

    fn run(&self, ctx: &SuiteContext<'_>) -> Result<SuiteReport, HarnessError> {
        let ckpt = ctx.checkpoint.ok_or_else(|| HarnessError::MissingCheckpoint("bb".into()))?;
        let before = ctx.require_policy()?;
        let (env, thrower) = shifted_env(ctx.config);
        let mut report = SuiteReport::new(self.name());
        report.run(&ctx.spec("training", "bb", &ctx.config.env, ctx.config.thrower.clone(), Some(&before)), ctx.agents)?;
        report.run(&ctx.spec("shifted_before", "bb", &env, thrower.clone(), Some(&before)), ctx.agents)?;
        let ft = &ctx.config.finetune;
        let objective = CatchObjective::new(env.clone(), thrower.clone(), before.arch.clone(), ft.reward_mode)?;
        let ft_dir = ctx.out_dir.map(|d| d.join("finetune"));
        if let Some(d) = &ft_dir {
            std::fs::create_dir_all(d).map_err(|e| HarnessError::Io(format!("{}: {e}", d.display())))?;
        }
        let tuned = finetune(&objective, ckpt, ft.bgs.clone(), ft_dir.as_deref())?;
        let after = Policy::new(before.arch.clone(), tuned.checkpoint.theta.clone())?;
        report.run(&ctx.spec("shifted_after", "bb", &env, thrower, Some(&after)), ctx.agents)?;
        report.summary.push(("finetune_iteration_variance".into(), tuned.iteration_variance));
        report.finetune = Some(tuned);
        Ok(report)
    }
}

/// Named evaluation suites.
pub struct SuiteRegistry {
    suites: Vec<Box<dyn Suite>>,
}

impl Default for SuiteRegistry {
    fn default() -> Self {
        let mut r = Self { suites: Vec::new() };
        r.register(Box::new(SpeedShift));
        r.register(Box::new(YawSweep));
        r.register(Box::new(Multimodality));
        r.register(Box::new(Sim2SimTransfer));
        r
    }
}

impl SuiteRegistry {
    pub fn register(&mut self, suite: Box<dyn Suite>) {
        self.suites.retain(|s| s.name() != suite.name());
        self.suites.push(suite);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.suites.iter().map(|s| s.name())
    }

    pub fn get(&self, name: &str) -> Result<&dyn Suite, HarnessError> {
        self.suites.iter().find(|s| s.name() == name).map(|s| s.as_ref()).ok_or_else(|| HarnessError::UnknownSuite(name.into()))
    }

    pub fn run(&self, name: &str, ctx: &SuiteContext<'_>) -> Result<SuiteReport, HarnessError> {
        self.get(name)?.run(ctx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_endpoints() {
        let g = yaw_grid(YAW_SWEEP_POINTS);
        assert_eq!(g.len(), 8);
        assert_eq!(g[0], -9.5);
        assert_eq!(g[7], 8.0);
        assert_eq!(g.iter().filter(|y| in_training_band(**y)).count(), 5);
    }

    #[test]
    fn registry_names() {
        let names: Vec<_> = SuiteRegistry::default().names().collect();
        assert_eq!(names, ["speed_shift", "yaw_sweep", "multimodality", "sim2sim_transfer"]);
        assert!(matches!(SuiteRegistry::default().get("nope"), Err(HarnessError::UnknownSuite(_))));
    }

    #[test]
    fn bb_suites_need_checkpoint() {
        let cfg = Config { episodes: 1, ..Config::default() };
        let agents = AgentRegistry::default();
        let ctx = SuiteContext { config: &cfg, checkpoint: None, agents: &agents, out_dir: None };
        let reg = SuiteRegistry::default();
        for name in ["speed_shift", "yaw_sweep", "sim2sim_transfer"] {
            assert!(matches!(reg.run(name, &ctx), Err(HarnessError::MissingCheckpoint(_))), "{name}");
        }
    }

    #[test]
    fn speed_shift_shape() {
        let cfg = Config { episodes: 1, ..Config::default() };
        let agents = AgentRegistry::default();
        let ckpt = Checkpoint::fresh(Some(cfg.policy.clone()), vec![0.0; cfg.policy.param_count()], cfg.bgs.clone());
        let ctx = SuiteContext { config: &cfg, checkpoint: Some(&ckpt), agents: &agents, out_dir: None };
        let report = SuiteRegistry::default().run("speed_shift", &ctx).unwrap();
        assert_eq!(report.rows.len(), 6);
        let conditions: std::collections::BTreeSet<_> = report.rows.iter().map(|r| r.condition.as_str()).collect();
        assert_eq!(conditions.len(), 3);
    }
}
