//! Rigid-body plant driven by per-rotor thrusts.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use super::SimError;
use crate::assembly::{assembly_inertia, AssemblyLayout, ROTORS_PER_UNIT};
use crate::fault::FaultState;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidState {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    /// Body to world.
    pub q: UnitQuaternion<f64>,
    /// Body rates, rad/s.
    pub w: Vector3<f64>,
}

impl RigidState {
    pub fn at_rest(p: Vector3<f64>, yaw: f64) -> Self {
        RigidState {
            p,
            v: Vector3::zeros(),
            q: UnitQuaternion::from_euler_angles(0.0, 0.0, yaw),
            w: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.v.iter()).chain(self.w.iter()).all(|x| x.is_finite())
            && self.q.coords.iter().all(|x| x.is_finite())
    }

    /// Roll, pitch, yaw (ZYX).
    pub fn euler(&self) -> (f64, f64, f64) {
        self.q.euler_angles()
    }

    /// Angle between body z and world z.
    pub fn tilt(&self) -> f64 {
        let z = self.q * Vector3::z();
        z.z.clamp(-1.0, 1.0).acos()
    }
}

/// Mass properties of the flying assembly; failed units stay on as load.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub mass: f64,
    pub inertia: Matrix3<f64>,
    pub inertia_inv: Matrix3<f64>,
}

impl PlantModel {
    pub fn for_layout(layout: &AssemblyLayout) -> Self {
        let m = assembly_inertia(layout);
        let inertia_inv = m
            .inertia
            .try_inverse()
            .expect("assembly inertia is positive definite");
        PlantModel {
            mass: m.total_mass,
            inertia: m.inertia,
            inertia_inv,
        }
    }
}

/// Body-frame thrust and moment from the thrusts the rotors actually make.
pub fn applied_wrench(
    layout: &AssemblyLayout,
    faults: &FaultState,
    commanded: &[[f64; ROTORS_PER_UNIT]],
) -> (f64, Vector3<f64>) {
    layout.wrench_of(&faults.apply(commanded))
}

/// Advances the plant by `dt`.
///
/// Translation uses the constant-acceleration update
/// `p += v·dt + ½·a·dt²`, `v += a·dt`; rotation is semi-implicit Euler
/// (rates first, then attitude from the new rates) with the quaternion
/// renormalized.
pub fn plant_step(
    state: &RigidState,
    commanded: &[[f64; ROTORS_PER_UNIT]],
    faults: &FaultState,
    layout: &AssemblyLayout,
    model: &PlantModel,
    g: f64,
    dt: f64,
) -> Result<RigidState, SimError> {
    if !(dt > 0.0 && dt <= 0.01) {
        return Err(SimError::Config(format!("plant dt must lie in (0, 0.01], got {dt}")));
    }
    if let Some(f) = commanded.iter().flatten().find(|f| !(**f >= 0.0)) {
        return Err(SimError::Config(format!("rotor thrust must be non-negative, got {f}")));
    }
    let (force, moment) = applied_wrench(layout, faults, commanded);
    Ok(integrate(state, force, &moment, model, g, dt))
}

pub(crate) fn integrate(
    state: &RigidState,
    force: f64,
    moment: &Vector3<f64>,
    model: &PlantModel,
    g: f64,
    dt: f64,
) -> RigidState {
    let a = state.q * Vector3::new(0.0, 0.0, force / model.mass) - Vector3::new(0.0, 0.0, g);
    let p = state.p + state.v * dt + 0.5 * a * dt * dt;
    let v = state.v + a * dt;
    let jw = model.inertia * state.w;
    let w_dot = model.inertia_inv * (moment - state.w.cross(&jw));
    let w = state.w + w_dot * dt;
    let mut q = state.q * UnitQuaternion::from_scaled_axis(w * dt);
    q.renormalize();
    RigidState { p, v, q, w }
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::assembly::UnitSpec;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn free_fall_is_ballistic(
            v in prop::array::uniform3(-3.0f64..3.0),
            w in prop::array::uniform3(-1.0f64..1.0),
            yaw in -3.0f64..3.0,
        ) {
            let layout = AssemblyLayout::grid(2, 1, 0.3, UnitSpec::default()).unwrap();
            let model = PlantModel::for_layout(&layout);
            let faults = FaultState::healthy(2);
            let mut s = RigidState::at_rest(Vector3::zeros(), yaw);
            s.v = Vector3::from(v);
            s.w = Vector3::from(w);
            let zero = vec![[0.0; ROTORS_PER_UNIT]; 2];
            for _ in 0..500 {
                s = plant_step(&s, &zero, &faults, &layout, &model, 9.81, 1e-3).unwrap();
            }
            let expect = Vector3::from(v) * 0.5 - Vector3::new(0.0, 0.0, 0.5 * 9.81 * 0.25);
            prop_assert!((s.p - expect).norm() < 1e-9);
            prop_assert!((s.q.norm() - 1.0).abs() < 1e-12);
        }
    }
}
