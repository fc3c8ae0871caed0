//! Rigid-pocket stand-in for the net: a cylinder hanging from the net center
//! toward the opening, with absorbing mesh and spring walls.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContactConfig {
    pub ball_radius: f64,
    /// Rate (1/s) at which the mesh pulls the ball to the net velocity.
    pub absorption: f64,
    /// Wall and bottom spring rate per unit mass (1/s^2).
    pub stiffness: f64,
    /// Penetration below the pocket bottom at which the ball tears through.
    pub tear_depth: f64,
    /// Radial distance past the rim at which the ball escapes sideways.
    pub escape_margin: f64,
    pub capture_speed: f64,
    /// Integration substeps per control period near the net.
    pub substeps: usize,
    /// Ball–net distance below which substepping is used.
    pub near_distance: f64,
}

impl Default for ContactConfig {
    fn default() -> Self {
        Self {
            ball_radius: 0.03,
            absorption: 30.0,
            stiffness: 2000.0,
            tear_depth: 0.05,
            escape_margin: 0.03,
            capture_speed: 1.0,
            substeps: 20,
            near_distance: 0.6,
        }
    }
}

impl ContactConfig {
    pub fn validate(&self) -> Result<(), String> {
        let values = [self.ball_radius, self.absorption, self.stiffness, self.tear_depth, self.escape_margin, self.capture_speed];
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err("contact parameters must be nonnegative".into());
        }
        if self.substeps == 0 {
            return Err("contact substeps must be at least 1".into());
        }
        Ok(())
    }
}

/// Instantaneous kinematics of the net head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetFrame {
    pub center: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub omega: Vector3<f64>,
}

impl NetFrame {
    /// Opening direction, from the pocket bottom toward the mouth.
    pub fn opening(&self) -> Vector3<f64> {
        -self.normal
    }

    pub fn point_velocity(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.velocity + self.omega.cross(&(p - self.center))
    }

    /// `(axial, radial vector)` of `p`, axial measured from the bottom.
    pub fn split(&self, p: &Vector3<f64>) -> (f64, Vector3<f64>) {
        let rel = p - self.center;
        let n = self.opening();
        let axial = rel.dot(&n);
        (axial, rel - n * axial)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pocket {
    pub radius: f64,
    pub depth: f64,
}

impl Pocket {
    pub fn contains(&self, frame: &NetFrame, p: &Vector3<f64>) -> bool {
        let (axial, radial) = frame.split(p);
        (0.0..=self.depth).contains(&axial) && radial.norm() <= self.radius
    }

    /// Whether a contained ball has left the pocket.
    pub fn escaped(&self, frame: &NetFrame, p: &Vector3<f64>, contact: &ContactConfig) -> bool {
        let (axial, radial) = frame.split(p);
        axial > self.depth || axial < -contact.tear_depth || radial.norm() > self.radius + contact.escape_margin
    }

    /// Acceleration on a contained ball, excluding gravity.
    pub fn contact_acceleration(&self, frame: &NetFrame, p: &Vector3<f64>, v: &Vector3<f64>, contact: &ContactConfig) -> Vector3<f64> {
        let (axial, radial) = frame.split(p);
        let mut acc = (frame.point_velocity(p) - v) * contact.absorption;
        let floor = contact.ball_radius.min(self.depth);
        if axial < floor {
            acc += frame.opening() * (contact.stiffness * (floor - axial));
        }
        let wall = (self.radius - contact.ball_radius).max(0.0);
        let r = radial.norm();
        if r > wall && r > 0.0 {
            acc -= radial * (contact.stiffness * (r - wall) / r);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame() -> NetFrame {
        NetFrame { center: Vector3::zeros(), normal: Vector3::y(), velocity: Vector3::zeros(), omega: Vector3::zeros() }
    }

    #[test]
    fn containment_geometry() {
        let pocket = Pocket { radius: 0.1, depth: 0.15 };
        let f = frame();
        assert!(pocket.contains(&f, &Vector3::zeros()));
        assert!(pocket.contains(&f, &Vector3::new(0.05, -0.1, 0.0)));
        assert!(!pocket.contains(&f, &Vector3::new(0.0, 0.05, 0.0)));
        assert!(!pocket.contains(&f, &Vector3::new(0.0, -0.2, 0.0)));
        assert!(!pocket.contains(&f, &Vector3::new(0.5, 0.0, 0.0)));
    }

    #[test]
    fn ball_dropped_into_pocket_settles() {
        let pocket = Pocket { radius: 0.1, depth: 0.15 };
        let contact = ContactConfig::default();
        // Opening up, ball entering at 4 m/s.
        let f = NetFrame { normal: -Vector3::z(), ..frame() };
        let g = Vector3::new(0.0, 0.0, -9.81);
        let mut p = Vector3::new(0.02, 0.0, 0.14);
        let mut v = Vector3::new(0.3, 0.0, -4.0);
        let h = 1.0 / 1500.0;
        for _ in 0..1500 {
            v += (g + pocket.contact_acceleration(&f, &p, &v, &contact)) * h;
            p += v * h;
            assert!(!pocket.escaped(&f, &p, &contact));
        }
        assert!(pocket.contains(&f, &p));
        assert!(v.norm() < 0.05);
    }
}
