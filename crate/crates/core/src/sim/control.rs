//! Cascaded position/attitude tracking controller.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::plant::{PlantModel, RigidState};
use crate::allocation::WrenchCommand;
use crate::planner::wrap_angle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerGains {
    /// Position error → acceleration, 1/s².
    pub kp: [f64; 3],
    /// Velocity error → acceleration, 1/s.
    pub kd: [f64; 3],
    /// Attitude error → angular acceleration, 1/s² (roll, pitch, yaw).
    pub k_r: [f64; 3],
    /// Rate error → angular acceleration, 1/s.
    pub k_w: [f64; 3],
    pub g: f64,
    /// Largest commanded tilt, radians.
    pub max_tilt: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        ControllerGains {
            kp: [4.0, 4.0, 6.0],
            kd: [3.0, 3.0, 4.0],
            k_r: [25.0, 25.0, 8.0],
            k_w: [9.0, 9.0, 5.0],
            g: 9.81,
            max_tilt: 35f64.to_radians(),
        }
    }
}

impl ControllerGains {
    pub fn validate(&self) -> Result<(), String> {
        let all = self.kp.iter().chain(&self.kd).chain(&self.k_r).chain(&self.k_w);
        if all.clone().any(|k| !(*k >= 0.0)) {
            return Err("controller gains must be non-negative".into());
        }
        if !(self.g > 0.0) || !(self.max_tilt > 0.0 && self.max_tilt < std::f64::consts::FRAC_PI_2) {
            return Err("g must be positive and max_tilt in (0, π/2)".into());
        }
        Ok(())
    }
}

/// Reference the controller tracks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefState {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub a: Vector3<f64>,
    pub psi: f64,
    pub psi_rate: f64,
}

impl RefState {
    pub fn hover(p: Vector3<f64>, psi: f64) -> Self {
        RefState {
            p,
            v: Vector3::zeros(),
            a: Vector3::zeros(),
            psi,
            psi_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub command: WrenchCommand,
    pub desired: Rotation3<f64>,
    /// Attitude error used for the moment (roll, pitch, wrapped yaw).
    pub attitude_error: Vector3<f64>,
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// PD on position (with reference acceleration feed-forward) gives the
/// desired thrust vector; its direction and the reference yaw give the
/// desired attitude; PD on the attitude error, scaled by the inertia, gives
/// the moment. The yaw error is the wrapped heading difference.
pub fn tracking_controller(
    state: &RigidState,
    reference: &RefState,
    gains: &ControllerGains,
    model: &PlantModel,
) -> ControlOutput {
    let kp = Vector3::from(gains.kp);
    let kd = Vector3::from(gains.kd);
    let mut a_des = reference.a
        + kp.component_mul(&(reference.p - state.p))
        + kd.component_mul(&(reference.v - state.v))
        + Vector3::new(0.0, 0.0, gains.g);
    // keep some lift and bound the tilt
    a_des.z = a_des.z.max(0.2 * gains.g);
    let horiz = a_des.xy().norm();
    let limit = a_des.z * gains.max_tilt.tan();
    if horiz > limit {
        let s = limit / horiz;
        a_des.x *= s;
        a_des.y *= s;
    }

    let r = state.q.to_rotation_matrix();
    let b3 = r * Vector3::z();
    let force = (model.mass * a_des.dot(&b3)).max(0.0);

    let b3_d = a_des.normalize();
    let heading = Vector3::new(reference.psi.cos(), reference.psi.sin(), 0.0);
    let b2_d = b3_d.cross(&heading).normalize();
    let b1_d = b2_d.cross(&b3_d);
    let r_d = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[b1_d, b2_d, b3_d]));

    let rm = r.matrix();
    let rdm = r_d.matrix();
    let mut e_r = 0.5 * vee(&(rdm.transpose() * rm - rm.transpose() * rdm));
    let (_, _, yaw) = state.q.euler_angles();
    e_r.z = wrap_angle(yaw - reference.psi);
    let w_d = rm.transpose() * rdm * Vector3::new(0.0, 0.0, reference.psi_rate);
    let e_w = state.w - w_d;

    let kr = Vector3::from(gains.k_r);
    let kw = Vector3::from(gains.k_w);
    let alpha = -kr.component_mul(&e_r) - kw.component_mul(&e_w);
    let moment = model.inertia * alpha + state.w.cross(&(model.inertia * state.w));
    ControlOutput {
        command: WrenchCommand::new(force, moment),
        desired: r_d,
        attitude_error: e_r,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{AssemblyLayout, UnitSpec};
    use approx::assert_relative_eq;

    fn model() -> PlantModel {
        PlantModel::for_layout(&AssemblyLayout::grid(3, 2, 0.3, UnitSpec::default()).unwrap())
    }

    #[test]
    fn zero_error_is_hover() {
        let m = model();
        let s = RigidState::at_rest(Vector3::new(0.0, 0.0, 1.0), 0.3);
        let out = tracking_controller(&s, &RefState::hover(s.p, 0.3), &ControllerGains::default(), &m);
        assert_relative_eq!(out.command.force, m.mass * 9.81, epsilon = 1e-9);
        assert!(out.command.moment.amax() < 1e-9);
    }

    #[test]
    fn forward_error_pitches_forward() {
        let m = model();
        let s = RigidState::at_rest(Vector3::new(0.0, 0.0, 1.0), 0.0);
        let r = RefState::hover(Vector3::new(1.0, 0.0, 1.0), 0.0);
        let out = tracking_controller(&s, &r, &ControllerGains::default(), &m);
        let (roll, pitch, _) = out.desired.euler_angles();
        assert!(pitch > 0.0 && roll.abs() < 1e-12);
        assert!(out.command.force >= m.mass * 9.81 - 1e-9);
        // positive pitch moment to rotate toward it
        assert!(out.command.moment.y > 0.0);
    }

    #[test]
    fn yaw_error_gives_pure_yaw_moment() {
        let m = model();
        let gains = ControllerGains::default();
        let s = RigidState::at_rest(Vector3::new(0.0, 0.0, 1.0), 0.0);
        let psi = 10f64.to_radians();
        let out = tracking_controller(&s, &RefState::hover(s.p, psi), &gains, &m);
        let expect = m.inertia[(2, 2)] * gains.k_r[2] * psi;
        assert!(out.command.moment.x.abs() < 1e-9 && out.command.moment.y.abs() < 1e-9);
        assert_relative_eq!(out.command.moment.z, expect, epsilon = 1e-9);
    }

    #[test]
    fn tilt_is_bounded() {
        let m = model();
        let gains = ControllerGains::default();
        let s = RigidState::at_rest(Vector3::zeros(), 0.0);
        let r = RefState::hover(Vector3::new(100.0, 0.0, 0.0), 0.0);
        let out = tracking_controller(&s, &r, &gains, &m);
        let tilt = (out.desired * Vector3::z()).z.acos();
        assert!(tilt <= gains.max_tilt + 1e-9);
    }
}
