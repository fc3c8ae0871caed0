//! One-dimensional point-mass chase used to sanity-check the optimizer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::bgs::{Objective, Rollout};

/// Linear feedback `u = th0 (x_t - x) - th1 v + th2` on a unit mass chasing a
/// sinusoidal target with seeded amplitude and phase. Reward is the negative
/// mean tracking error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMassChase {
    pub steps: usize,
    pub dt: f64,
    pub max_force: f64,
}

impl Default for PointMassChase {
    fn default() -> Self {
        Self { steps: 40, dt: 0.05, max_force: 5.0 }
    }
}

impl Objective for PointMassChase {
    fn dim(&self) -> usize {
        3
    }

    fn evaluate(&self, theta: &[f64], episode_seed: u64) -> Rollout {
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
        let amp = rng.random_range(0.5..1.5);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let (mut x, mut v) = (0.0, 0.0);
        let mut err = 0.0;
        for k in 0..self.steps {
            let target = amp * (1.5 * k as f64 * self.dt + phase).sin();
            let u = (theta[0] * (target - x) - theta[1] * v + theta[2]).clamp(-self.max_force, self.max_force);
            v += u * self.dt;
            x += v * self.dt;
            err += (x - target).abs();
        }
        let reward = -err / self.steps as f64;
        Rollout { reward, success: reward > -0.1 }
    }
}
