use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ballistics::BallParams;

/// Loft that makes the total speed 5.5 m/s after 3.9 m of horizontal travel
/// at 4.5 m/s under standard gravity.
pub const DEFAULT_LOFT_DEG: f64 = 49.8778;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThrowerConfig {
    /// Horizontal distance from the release point to the robot base line.
    pub distance: f64,
    /// Mean horizontal release speed.
    pub speed_mean: f64,
    /// Standard deviation of the horizontal release speed.
    pub speed_jitter: f64,
    /// Yaw interval in degrees; positive yaw throws toward +x (right).
    pub yaw_range: [f64; 2],
    /// Probability of sampling from the right half of `yaw_range`.
    pub right_bias: f64,
    pub release_height: f64,
    pub loft_angle: f64,
    /// Yaw interval removed from `yaw_range`.
    pub yaw_exclude: Option<[f64; 2]>,
}

impl Default for ThrowerConfig {
    fn default() -> Self {
        Self {
            distance: 3.9,
            speed_mean: 4.5,
            speed_jitter: 0.05,
            yaw_range: [-6.0, 6.3],
            right_bias: 0.6,
            release_height: 0.15,
            loft_angle: DEFAULT_LOFT_DEG,
            yaw_exclude: None,
        }
    }
}

/// One sampled throw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Throw {
    pub yaw_deg: f64,
    pub speed: f64,
    pub side: Side,
    pub ball: BallParams,
}

impl ThrowerConfig {
    pub fn training() -> Self {
        Self::default()
    }

    pub fn with_speed(speed_mean: f64) -> Self {
        Self { speed_mean, ..Self::default() }
    }

    pub fn slower() -> Self {
        Self::with_speed(4.1)
    }

    pub fn faster() -> Self {
        Self::with_speed(4.7)
    }

    pub fn with_yaw(lo: f64, hi: f64) -> Self {
        Self { yaw_range: [lo, hi], ..Self::default() }
    }

    /// The wide sweep interval with the training interval cut out.
    pub fn out_of_band() -> Self {
        Self { yaw_range: [-9.5, 8.0], yaw_exclude: Some([-6.0, 6.3]), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.distance > 0.0) {
            return Err("thrower distance must be positive".into());
        }
        if !(self.speed_mean > 0.0) || !(self.speed_jitter >= 0.0) {
            return Err("thrower speed must be positive with nonnegative jitter".into());
        }
        let [lo, hi] = self.yaw_range;
        if !(lo < hi) {
            return Err(format!("yaw_range lo {lo} must be below hi {hi}"));
        }
        if !(0.0..=1.0).contains(&self.right_bias) {
            return Err(format!("right_bias {} outside [0, 1]", self.right_bias));
        }
        if !(self.loft_angle > -89.0 && self.loft_angle < 89.0) || !self.release_height.is_finite() {
            return Err("release geometry must be finite with |loft| < 89 deg".into());
        }
        if let Some([a, b]) = self.yaw_exclude {
            if !(a < b) {
                return Err("yaw_exclude must be an increasing interval".into());
            }
            for (h_lo, h_hi) in self.halves().into_iter().flatten() {
                if a <= h_lo && h_hi <= b {
                    return Err("yaw_exclude removes a whole half of yaw_range".into());
                }
            }
        }
        Ok(())
    }

    pub fn release_position(&self) -> Vector3<f64> {
        Vector3::new(0.0, -self.distance, self.release_height)
    }

    /// Release velocity for a horizontal speed and yaw.
    pub fn release_velocity(&self, speed: f64, yaw_deg: f64) -> Vector3<f64> {
        let yaw = yaw_deg.to_radians();
        let vz = speed * self.loft_angle.to_radians().tan();
        Vector3::new(speed * yaw.sin(), speed * yaw.cos(), vz)
    }

    /// `[left, right]` halves of the yaw interval split at zero.
    fn halves(&self) -> [Option<(f64, f64)>; 2] {
        let [lo, hi] = self.yaw_range;
        let left = (lo < 0.0).then(|| (lo, hi.min(0.0)));
        let right = (hi > 0.0).then(|| (lo.max(0.0), hi));
        [left, right]
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Throw {
        let [left, right] = self.halves();
        let pick_right = rng.random::<f64>() < self.right_bias;
        let (side, (lo, hi)) = match (left, right, pick_right) {
            (Some(l), Some(_), false) | (Some(l), None, _) => (Side::Left, l),
            (_, Some(r), _) => (Side::Right, r),
            (None, None, _) => unreachable!("validated yaw_range is nonempty"),
        };
        let mut yaw_deg = rng.random_range(lo..=hi);
        if let Some([a, b]) = self.yaw_exclude {
            // Map uniformly onto the half with the band removed.
            let keep_lo = (a.max(lo) - lo).max(0.0);
            let keep_hi = (hi - b.min(hi)).max(0.0);
            let u = (yaw_deg - lo) / (hi - lo) * (keep_lo + keep_hi);
            yaw_deg = if u < keep_lo { lo + u } else { b.max(lo) + (u - keep_lo) };
        }
        let noise = Normal::new(0.0, 1.0).expect("unit normal");
        let speed = (self.speed_mean + self.speed_jitter * noise.sample(rng)).max(0.1 * self.speed_mean);
        let ball = BallParams {
            p_ref: self.release_position(),
            v_ref: self.release_velocity(speed, yaw_deg),
            t_ref: 0.0,
        };
        Throw { yaw_deg, speed, side, ball }
    }
}

/// Loft angle giving `catch_speed` after `distance` of horizontal travel.
pub fn loft_for_catch_speed(distance: f64, speed: f64, catch_speed: f64, gravity: f64) -> f64 {
    let t = distance / speed;
    let vz_catch = -(catch_speed * catch_speed - speed * speed).max(0.0).sqrt();
    let vz0 = vz_catch + gravity * t;
    (vz0 / speed).atan().to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_loft_matches_catch_speed() {
        let loft = loft_for_catch_speed(3.9, 4.5, 5.5, 9.81);
        assert!((loft - DEFAULT_LOFT_DEG).abs() < 1e-4, "{loft}");
    }

    #[test]
    fn full_right_bias_stays_right() {
        let cfg = ThrowerConfig { right_bias: 1.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let throw = cfg.sample(&mut rng);
            assert_eq!(throw.side, Side::Right);
            assert!((0.0..=6.3).contains(&throw.yaw_deg));
        }
    }

    #[test]
    fn sixty_forty_split() {
        let cfg = ThrowerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 4000;
        let right = (0..n).filter(|_| cfg.sample(&mut rng).side == Side::Right).count();
        let frac = right as f64 / n as f64;
        assert!((frac - 0.6).abs() < 0.03, "{frac}");
    }

    #[test]
    fn exclusion_band_is_never_sampled() {
        let cfg = ThrowerConfig::out_of_band();
        cfg.validate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let yaw = cfg.sample(&mut rng).yaw_deg;
            assert!((-9.5..=-6.0).contains(&yaw) || (6.3..=8.0).contains(&yaw), "{yaw}");
        }
    }

    #[test]
    fn validation() {
        assert!(ThrowerConfig::default().validate().is_ok());
        assert!(ThrowerConfig::with_yaw(2.0, 2.0).validate().is_err());
        assert!(ThrowerConfig { right_bias: 1.5, ..Default::default() }.validate().is_err());
        assert!(ThrowerConfig { distance: 0.0, ..Default::default() }.validate().is_err());
        let whole = ThrowerConfig { yaw_exclude: Some([-7.0, 0.0]), ..Default::default() };
        assert!(whole.validate().is_err());
    }

    #[test]
    fn horizontal_speed_and_yaw_sign() {
        let cfg = ThrowerConfig::default();
        let v = cfg.release_velocity(4.5, 5.0);
        assert!((v.xy().norm() - 4.5).abs() < 1e-12);
        assert!(v.x > 0.0 && v.y > 0.0 && v.z > 0.0);
    }
}
