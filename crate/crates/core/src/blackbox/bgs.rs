use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BlackboxError, PolicyArchitecture};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    /// Divide the step by the standard deviation of the selected returns.
    ZScore,
    /// Replace returns by centered ranks in `[-0.5, 0.5]`.
    CenteredRank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BgsConfig {
    pub sigma: f64,
    pub perturbations_per_step: usize,
    pub rollouts_per_perturbation: usize,
    pub step_size: f64,
    pub iterations: usize,
    pub antithetic: bool,
    pub top_fraction: f64,
    pub normalization: Normalization,
    pub seed: u64,
    /// Held-out episodes scored after every iteration.
    pub eval_episodes: usize,
    pub eval_seed: u64,
    /// Write a checkpoint every this many iterations, 0 to disable.
    pub checkpoint_every: usize,
    /// Record elapsed seconds in the learning curve. Off keeps outputs
    /// byte-reproducible.
    pub record_wall_time: bool,
}

impl Default for BgsConfig {
    fn default() -> Self {
        Self {
            sigma: 0.02,
            perturbations_per_step: 100,
            rollouts_per_perturbation: 1,
            step_size: 0.001,
            iterations: 1200,
            antithetic: true,
            top_fraction: 0.25,
            normalization: Normalization::ZScore,
            seed: 0,
            eval_episodes: 40,
            eval_seed: 1 << 40,
            checkpoint_every: 50,
            record_wall_time: false,
        }
    }
}

impl BgsConfig {
    pub fn validate(&self) -> Result<(), BlackboxError> {
        let fail = |m: &str| Err(BlackboxError::Config(m.to_string()));
        if !(self.sigma > 0.0) {
            return fail("sigma must be positive");
        }
        if self.perturbations_per_step < 1 || self.rollouts_per_perturbation < 1 {
            return fail("perturbations_per_step and rollouts_per_perturbation must be at least 1");
        }
        if !(self.step_size > 0.0) {
            return fail("step_size must be positive");
        }
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return fail("top_fraction must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn estimator(&self, iteration: usize) -> EstimatorParams {
        EstimatorParams {
            sigma: self.sigma,
            perturbations: self.perturbations_per_step,
            antithetic: self.antithetic,
            top_fraction: self.top_fraction,
            seed: self.seed,
            iteration: iteration as u64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorParams {
    pub sigma: f64,
    pub perturbations: usize,
    pub antithetic: bool,
    pub top_fraction: f64,
    pub seed: u64,
    pub iteration: u64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Episode seed bound to `(iteration, perturbation, rollout)`.
pub fn episode_seed(seed: u64, iteration: u64, index: usize, rollout: usize) -> u64 {
    splitmix64(seed ^ splitmix64(iteration ^ splitmix64((index as u64) << 16 ^ rollout as u64)))
}

/// Standard normal direction `index` of `iteration`.
pub fn perturbation(dim: usize, seed: u64, iteration: u64, index: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(splitmix64(iteration) ^ index as u64);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub gradient: Vec<f64>,
    pub deltas: Vec<Vec<f64>>,
    pub plus: Vec<f64>,
    /// Empty without antithetic sampling.
    pub minus: Vec<f64>,
    pub baseline: f64,
    /// Perturbation indices kept by the top-fraction filter, in index order.
    pub selected: Vec<usize>,
    /// Standard deviation of the selected returns.
    pub return_std: f64,
}

impl GradientEstimate {
    pub fn all_returns(&self) -> impl Iterator<Item = f64> + Clone + '_ {
        self.plus.iter().chain(&self.minus).copied()
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn combine(deltas: &[Vec<f64>], weights: &[(usize, f64)], scale: f64, dim: usize) -> Vec<f64> {
    let mut g = vec![0.0; dim];
    for &(i, w) in weights {
        for (gj, dj) in g.iter_mut().zip(&deltas[i]) {
            *gj += w * dj;
        }
    }
    g.iter_mut().for_each(|v| *v *= scale);
    g
}

/// Monte Carlo gradient of the Gaussian-smoothed objective. `eval` receives
/// the perturbed parameters and the perturbation index, so seeds can be bound
/// by index before dispatch.
pub fn estimate_gradient<F>(theta: &[f64], params: &EstimatorParams, eval: F) -> GradientEstimate
where
    F: Fn(&[f64], usize) -> f64 + Sync,
{
    let dim = theta.len();
    let p = params.perturbations;
    let sigma = params.sigma;
    let deltas: Vec<Vec<f64>> = (0..p).map(|i| perturbation(dim, params.seed, params.iteration, i)).collect();
    let shifted = |i: usize, sign: f64| -> Vec<f64> { theta.iter().zip(&deltas[i]).map(|(t, d)| t + sign * sigma * d).collect() };
    let jobs: Vec<(usize, f64)> = if params.antithetic {
        (0..p).flat_map(|i| [(i, 1.0), (i, -1.0)]).collect()
    } else {
        (0..p).map(|i| (i, 1.0)).collect()
    };
    let returns: Vec<f64> = jobs.par_iter().map(|&(i, sign)| eval(&shifted(i, sign), i)).collect();
    let (plus, minus): (Vec<f64>, Vec<f64>) = if params.antithetic {
        (returns.iter().step_by(2).copied().collect(), returns.iter().skip(1).step_by(2).copied().collect())
    } else {
        (returns, Vec::new())
    };

    let all: Vec<f64> = plus.iter().chain(&minus).copied().collect();
    let (baseline, _) = mean_std(all.iter().copied());
    let score = |i: usize| -> f64 {
        let f = (plus[i] - baseline).abs();
        if params.antithetic {
            f.max((minus[i] - baseline).abs())
        } else {
            f
        }
    };
    let keep = ((params.top_fraction * p as f64).ceil() as usize).clamp(1, p);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
    let mut selected = order[..keep].to_vec();
    selected.sort_unstable();

    let (weights, scale): (Vec<(usize, f64)>, f64) = if params.antithetic {
        (selected.iter().map(|&i| (i, plus[i] - minus[i])).collect(), 1.0 / (2.0 * sigma * keep as f64))
    } else {
        (selected.iter().map(|&i| (i, plus[i] - baseline)).collect(), 1.0 / (sigma * keep as f64))
    };
    let gradient = combine(&deltas, &weights, scale, dim);
    let kept = selected.iter().flat_map(|&i| {
        let m = if params.antithetic { Some(minus[i]) } else { None };
        std::iter::once(plus[i]).chain(m)
    });
    let (_, return_std) = mean_std(kept.collect::<Vec<_>>().into_iter());
    GradientEstimate { gradient, deltas, plus, minus, baseline, selected, return_std }
}

/// Centered ranks in `[-0.5, 0.5]`; ties share the mean rank.
pub fn centered_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n <= 1 {
        return vec![0.0; n];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; n];
    let mut k = 0;
    while k < n {
        let mut end = k;
        while end + 1 < n && values[order[end + 1]] == values[order[k]] {
            end += 1;
        }
        let r = 0.5 * (k + end) as f64;
        for &i in &order[k..=end] {
            ranks[i] = r / (n - 1) as f64 - 0.5;
        }
        k = end + 1;
    }
    ranks
}

/// Step direction under the chosen normalization.
pub fn update_direction(est: &GradientEstimate, params: &EstimatorParams, normalization: Normalization) -> Vec<f64> {
    let dim = est.gradient.len();
    match normalization {
        Normalization::None => est.gradient.clone(),
        Normalization::ZScore => {
            if est.return_std > 0.0 {
                est.gradient.iter().map(|g| g / est.return_std).collect()
            } else {
                vec![0.0; dim]
            }
        }
        Normalization::CenteredRank => {
            let all: Vec<f64> = est.all_returns().collect();
            let ranks = centered_ranks(&all);
            let p = est.plus.len();
            let keep = est.selected.len() as f64;
            let sigma = params.sigma;
            if params.antithetic {
                let w: Vec<(usize, f64)> = est.selected.iter().map(|&i| (i, ranks[i] - ranks[p + i])).collect();
                combine(&est.deltas, &w, 1.0 / (2.0 * sigma * keep), dim)
            } else {
                let w: Vec<(usize, f64)> = est.selected.iter().map(|&i| (i, ranks[i])).collect();
                combine(&est.deltas, &w, 1.0 / (sigma * keep), dim)
            }
        }
    }
}

/// Score of one rollout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub reward: f64,
    pub success: bool,
}

/// A seeded stochastic return to be maximized.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn evaluate(&self, theta: &[f64], episode_seed: u64) -> Rollout;
    /// Recorded in checkpoints so they can be reloaded as policies.
    fn architecture(&self) -> Option<PolicyArchitecture> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningPoint {
    pub iteration: usize,
    /// Held-out mean reward, or the training mean without held-out episodes.
    pub mean_reward: f64,
    pub reward_std: f64,
    pub success_rate: f64,
    /// Mean and standard deviation of the perturbed training rollouts.
    pub train_mean: f64,
    pub train_std: f64,
    pub wall_time: f64,
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub arch: Option<PolicyArchitecture>,
    pub theta: Vec<f64>,
    /// Number of completed iterations; the perturbation and episode streams
    /// of the next iteration follow from `(bgs.seed, iteration)`.
    pub iteration: usize,
    pub bgs: BgsConfig,
    pub curve: Vec<LearningPoint>,
}

impl Checkpoint {
    pub fn fresh(arch: Option<PolicyArchitecture>, theta: Vec<f64>, bgs: BgsConfig) -> Self {
        Self { version: CHECKPOINT_VERSION, arch, theta, iteration: 0, bgs, curve: Vec::new() }
    }

    /// Fresh checkpoint with weights drawn from `bgs.seed`.
    pub fn random_init(arch: PolicyArchitecture, bgs: BgsConfig) -> Self {
        let theta = arch.init(&mut ChaCha8Rng::seed_from_u64(bgs.seed));
        Self::fresh(Some(arch), theta, bgs)
    }

    pub fn save(&self, path: &Path) -> Result<(), BlackboxError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| BlackboxError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| BlackboxError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, BlackboxError> {
        let text = std::fs::read_to_string(path).map_err(|e| BlackboxError::Io(format!("{}: {e}", path.display())))?;
        let ckpt: Self = serde_json::from_str(&text).map_err(|e| BlackboxError::Checkpoint(e.to_string()))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(BlackboxError::Checkpoint(format!("unsupported checkpoint version {}", ckpt.version)));
        }
        if let Some(arch) = &ckpt.arch {
            if arch.param_count() != ckpt.theta.len() {
                return Err(BlackboxError::Checkpoint("theta length does not match architecture".into()));
            }
        }
        Ok(ckpt)
    }
}

/// Learning-curve CSV with columns `iteration,mean_reward,reward_std,wall_time`.
pub fn curve_csv(curve: &[LearningPoint]) -> String {
    let mut out = String::from("iteration,mean_reward,reward_std,wall_time\n");
    for p in curve {
        out.push_str(&format!("{},{},{},{}\n", p.iteration, p.mean_reward, p.reward_std, p.wall_time));
    }
    out
}

fn held_out<O: Objective + ?Sized>(objective: &O, theta: &[f64], bgs: &BgsConfig) -> Option<(f64, f64, f64)> {
    if bgs.eval_episodes == 0 {
        return None;
    }
    let rolls: Vec<Rollout> = (0..bgs.eval_episodes)
        .into_par_iter()
        .map(|j| objective.evaluate(theta, bgs.eval_seed.wrapping_add(j as u64)))
        .collect();
    let (mean, std) = mean_std(rolls.iter().map(|r| r.reward));
    let rate = rolls.iter().filter(|r| r.success).count() as f64 / rolls.len() as f64;
    Some((mean, std, rate))
}

/// Mean reward of perturbation `index`, averaged over its bound episode seeds.
fn perturbed_return<O: Objective + ?Sized>(objective: &O, theta: &[f64], bgs: &BgsConfig, iteration: usize, index: usize) -> f64 {
    let r = bgs.rollouts_per_perturbation;
    (0..r)
        .map(|k| objective.evaluate(theta, episode_seed(bgs.seed, iteration as u64, index, k)).reward)
        .sum::<f64>()
        / r as f64
}

/// Runs BGS iterations until `bgs.iterations` are complete, continuing from
/// `start`. With `out_dir` set, checkpoints and `curve.csv` are written there.
pub fn train<O: Objective + ?Sized>(objective: &O, start: Checkpoint, out_dir: Option<&Path>) -> Result<Checkpoint, BlackboxError> {
    let bgs = start.bgs.clone();
    bgs.validate()?;
    if start.theta.len() != objective.dim() {
        return Err(BlackboxError::ShapeMismatch(format!("theta has {} entries, objective expects {}", start.theta.len(), objective.dim())));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| BlackboxError::Io(format!("{}: {e}", dir.display())))?;
    }
    let clock = Instant::now();
    let mut ckpt = start;
    while ckpt.iteration < bgs.iterations {
        let iteration = ckpt.iteration;
        let params = bgs.estimator(iteration);
        let est = estimate_gradient(&ckpt.theta, &params, |theta, index| perturbed_return(objective, theta, &bgs, iteration, index));
        let direction = update_direction(&est, &params, bgs.normalization);
        for (t, d) in ckpt.theta.iter_mut().zip(&direction) {
            *t += bgs.step_size * d;
        }
        ckpt.iteration += 1;

        let (train_mean, train_std) = mean_std(est.all_returns());
        let (mean_reward, reward_std, success_rate) = held_out(objective, &ckpt.theta, &bgs).unwrap_or((train_mean, train_std, f64::NAN));
        let wall_time = if bgs.record_wall_time { clock.elapsed().as_secs_f64() } else { 0.0 };
        log::info!("iteration {} mean reward {mean_reward:.4} success {success_rate:.3}", ckpt.iteration);
        ckpt.curve.push(LearningPoint {
            iteration: ckpt.iteration,
            mean_reward,
            reward_std,
            success_rate,
            train_mean,
            train_std,
            wall_time,
        });

        if let Some(dir) = out_dir {
            let last = ckpt.iteration == bgs.iterations;
            if last || (bgs.checkpoint_every > 0 && ckpt.iteration.is_multiple_of(bgs.checkpoint_every)) {
                ckpt.save(&dir.join(format!("checkpoint_{:05}.json", ckpt.iteration)))?;
                ckpt.save(&dir.join("latest.json"))?;
                write_curve(dir, &ckpt.curve)?;
            }
        }
    }
    Ok(ckpt)
}

fn write_curve(dir: &Path, curve: &[LearningPoint]) -> Result<(), BlackboxError> {
    let path: PathBuf = dir.join("curve.csv");
    std::fs::write(&path, curve_csv(curve)).map_err(|e| BlackboxError::Io(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneReport {
    pub checkpoint: Checkpoint,
    /// Points added by this run.
    pub curve: Vec<LearningPoint>,
    /// Variance of the per-iteration training mean reward.
    pub iteration_variance: f64,
}

/// Continues from a checkpoint on a different objective for `bgs.iterations`
/// further iterations.
pub fn finetune<O: Objective + ?Sized>(objective: &O, checkpoint: &Checkpoint, bgs: BgsConfig, out_dir: Option<&Path>) -> Result<FinetuneReport, BlackboxError> {
    let done = checkpoint.iteration;
    let start = Checkpoint {
        version: CHECKPOINT_VERSION,
        arch: checkpoint.arch.clone(),
        theta: checkpoint.theta.clone(),
        iteration: done,
        bgs: BgsConfig { iterations: done + bgs.iterations, ..bgs },
        curve: checkpoint.curve.clone(),
    };
    let result = train(objective, start, out_dir)?;
    let curve = result.curve[done..].to_vec();
    let (_, std) = mean_std(curve.iter().map(|p| p.train_mean));
    Ok(FinetuneReport { checkpoint: result, curve, iteration_variance: std * std })
}
