//! Reference sources for the tracking loop.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::control::RefState;
use crate::trajopt::PiecewiseTrajectory;

/// Helix around the z axis, starting at `(radius, 0, z0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpiralParams {
    pub radius: f64,
    /// Climb rate, m/s.
    pub pitch_rate: f64,
    /// rad/s.
    pub angular_rate: f64,
    pub z0: f64,
    pub psi: f64,
}

impl Default for SpiralParams {
    fn default() -> Self {
        SpiralParams {
            radius: 1.0,
            pitch_rate: 0.1,
            angular_rate: 0.5,
            z0: 1.0,
            psi: 0.0,
        }
    }
}

pub fn spiral_reference(t: f64, s: &SpiralParams) -> RefState {
    let t = t.max(0.0);
    let (r, w) = (s.radius, s.angular_rate);
    let (sn, cs) = (w * t).sin_cos();
    RefState {
        p: Vector3::new(r * cs, r * sn, s.z0 + s.pitch_rate * t),
        v: Vector3::new(-r * w * sn, r * w * cs, s.pitch_rate),
        a: Vector3::new(-r * w * w * cs, -r * w * w * sn, 0.0),
        psi: s.psi,
        psi_rate: 0.0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    Hover { p: Vector3<f64>, psi: f64 },
    Spiral(SpiralParams),
    /// Planned trajectory flown at constant altitude `z`; holds the end state.
    Trajectory { traj: PiecewiseTrajectory, z: f64 },
}

impl Reference {
    pub fn at(&self, t: f64) -> RefState {
        match self {
            Reference::Hover { p, psi } => RefState::hover(*p, *psi),
            Reference::Spiral(s) => spiral_reference(t, s),
            Reference::Trajectory { traj, z } => {
                let s = traj.evaluate(t);
                let mut p = s.position;
                p.z += z;
                let (v, a, rate) = if s.clamped {
                    (Vector3::zeros(), Vector3::zeros(), 0.0)
                } else {
                    (s.velocity, s.acceleration, s.psi_rate)
                };
                RefState {
                    p,
                    v,
                    a,
                    psi: s.psi,
                    psi_rate: rate,
                }
            }
        }
    }

    /// Natural length of the reference, if it has one.
    pub fn duration(&self) -> Option<f64> {
        match self {
            Reference::Trajectory { traj, .. } => Some(traj.total_time()),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn starts_on_the_x_axis() {
        let s = SpiralParams::default();
        let r = spiral_reference(0.0, &s);
        assert_relative_eq!(r.p, Vector3::new(1.0, 0.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn one_period_returns_and_climbs() {
        let s = SpiralParams::default();
        let period = 2.0 * PI / s.angular_rate;
        let a = spiral_reference(0.0, &s);
        let b = spiral_reference(period, &s);
        assert_relative_eq!(b.p.x, a.p.x, epsilon = 1e-12);
        assert_relative_eq!(b.p.y, a.p.y, epsilon = 1e-12);
        assert_relative_eq!(b.p.z - a.p.z, s.pitch_rate * period, epsilon = 1e-12);
    }

    #[test]
    fn speed_is_constant_and_derivatives_match() {
        let s = SpiralParams {
            radius: 0.7,
            pitch_rate: 0.2,
            angular_rate: 1.3,
            ..Default::default()
        };
        let speed = ((s.radius * s.angular_rate).powi(2) + s.pitch_rate.powi(2)).sqrt();
        let h = 1e-6;
        for k in 0..20 {
            let t = 0.05 + 0.37 * k as f64;
            let r = spiral_reference(t, &s);
            assert_relative_eq!(r.v.norm(), speed, epsilon = 1e-12);
            let fd_v = (spiral_reference(t + h, &s).p - spiral_reference(t - h, &s).p) / (2.0 * h);
            let fd_a = (spiral_reference(t + h, &s).v - spiral_reference(t - h, &s).v) / (2.0 * h);
            assert_relative_eq!(r.v, fd_v, epsilon = 1e-7);
            assert_relative_eq!(r.a, fd_a, epsilon = 1e-7);
        }
    }
}
