//! Torque authority as a function of attitude and the yaw that maximizes it.

use std::f64::consts::{PI, TAU};

use nalgebra::{Rotation3, Vector2, Vector3};

use super::PlannerError;
use crate::assembly::{signed_lever_sums, AssemblyLayout, TauPM, ROTORS_PER_UNIT};
use crate::fault::FaultState;

/// Sign weights that turn the four signed capacities into minus the total
/// authority.
pub const C_TAU: [f64; 4] = [1.0, 1.0, -1.0, -1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct AttitudeObjectiveSpec {
    pub c_tau: [f64; 4],
    /// Nominal per-rotor thrust limits, one row per unit.
    pub u_max: Vec<[f64; ROTORS_PER_UNIT]>,
    /// Weight of the attitude-deviation cost.
    pub l_phi: f64,
}

impl AttitudeObjectiveSpec {
    pub fn for_layout(layout: &AssemblyLayout, l_phi: f64) -> Self {
        let row = std::array::from_fn(|j| layout.unit().rotors[j].f_max);
        AttitudeObjectiveSpec {
            c_tau: C_TAU,
            u_max: vec![row; layout.n()],
            l_phi,
        }
    }

    pub fn validate(&self, layout: &AssemblyLayout) -> Result<(), PlannerError> {
        if self.c_tau != C_TAU {
            return Err(PlannerError::Spec(format!("c_tau must be {C_TAU:?}")));
        }
        if self.u_max.len() != layout.n() {
            return Err(PlannerError::Spec(format!(
                "u_max covers {} units, layout has {}",
                self.u_max.len(),
                layout.n()
            )));
        }
        if self.u_max.iter().flatten().any(|&u| !(u > 0.0)) {
            return Err(PlannerError::Spec("u_max entries must be positive".into()));
        }
        if !(self.l_phi >= 0.0) {
            return Err(PlannerError::Spec("l_phi must be non-negative".into()));
        }
        Ok(())
    }
}

/// Wraps an angle into `[−π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

/// Distance between two yaw angles when angles differing by a multiple of
/// `period` are equivalent.
pub fn wrapped_yaw_distance(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).rem_euclid(period);
    d.min(period - d)
}

/// Rotor points and their available thrust `η·u_max`.
fn weighted_rotors(
    layout: &AssemblyLayout,
    faults: &FaultState,
    spec: &AttitudeObjectiveSpec,
) -> Vec<(Vector2<f64>, f64)> {
    let mut out = Vec::with_capacity(layout.n() * ROTORS_PER_UNIT);
    for i in 0..layout.n() {
        let eta = faults.eta(i);
        for (j, e) in eta.iter().enumerate() {
            out.push((layout.rotor_position(i, j), e * spec.u_max[i][j]));
        }
    }
    out
}

fn rotation(phi: &Vector3<f64>) -> Rotation3<f64> {
    Rotation3::from_euler_angles(phi.x, phi.y, phi.z)
}

fn tau_of(points: &[(Vector2<f64>, f64)], phi: &Vector3<f64>) -> TauPM {
    let r = rotation(phi);
    let rotated: Vec<Vector2<f64>> = points
        .iter()
        .map(|(p, _)| (r * Vector3::new(p.x, p.y, 0.0)).xy())
        .collect();
    let u: Vec<f64> = points.iter().map(|(_, u)| *u).collect();
    signed_lever_sums(rotated.iter(), &u)
}

/// Signed torque capacities with every rotor at its limit, lever arms
/// rotated by `R = Rz(ψ)·Ry(θ)·Rx(φ)`.
pub fn tau_pm_max(
    layout: &AssemblyLayout,
    faults: &FaultState,
    phi: &Vector3<f64>,
    spec: &AttitudeObjectiveSpec,
) -> Result<TauPM, PlannerError> {
    faults.check_layout(layout)?;
    spec.validate(layout)?;
    Ok(tau_of(&weighted_rotors(layout, faults, spec), phi))
}

pub fn attitude_objective(tau: &TauPM, spec: &AttitudeObjectiveSpec) -> f64 {
    tau.dot(&spec.c_tau)
}

/// [`optimal_attitude_with_step`] on a 1° grid.
pub fn optimal_attitude(
    layout: &AssemblyLayout,
    faults: &FaultState,
    spec: &AttitudeObjectiveSpec,
) -> Result<Vector3<f64>, PlannerError> {
    optimal_attitude_with_step(layout, faults, spec, 1f64.to_radians())
}

/// Minimizes the objective over yaw on a uniform grid covering `[−π/2, π/2)`
/// with roll and pitch held at zero. Near-ties go to the smallest `|ψ|`,
/// then to the positive angle.
pub fn optimal_attitude_with_step(
    layout: &AssemblyLayout,
    faults: &FaultState,
    spec: &AttitudeObjectiveSpec,
    step: f64,
) -> Result<Vector3<f64>, PlannerError> {
    faults.check_layout(layout)?;
    spec.validate(layout)?;
    if !(step > 0.0) {
        return Err(PlannerError::Config(format!("yaw step must be positive, got {step}")));
    }
    let points = weighted_rotors(layout, faults, spec);
    if points.iter().all(|(_, u)| *u == 0.0) {
        return Err(PlannerError::NoFunctionalRotor);
    }
    let count = (PI / step).round() as i64;
    let half = count / 2;
    let samples: Vec<(f64, f64)> = (-half..count - half)
        .map(|k| {
            let psi = k as f64 * step;
            let phi = Vector3::new(0.0, 0.0, psi);
            (psi, attitude_objective(&tau_of(&points, &phi), spec))
        })
        .collect();
    let best = samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let tol = 1e-9 * (1.0 + best.abs());
    let psi = samples
        .iter()
        .filter(|s| s.1 <= best + tol)
        .map(|s| s.0)
        .min_by(|a, b| {
            a.abs()
                .partial_cmp(&b.abs())
                .unwrap()
                .then(b.partial_cmp(a).unwrap())
        })
        .expect("sweep is non-empty");
    Ok(Vector3::new(0.0, 0.0, psi))
}

/// Smallest of 90°, 180°, 360° under which the thrust-weighted rotor
/// pattern maps onto itself by a yaw rotation.
pub fn yaw_symmetry_period(
    layout: &AssemblyLayout,
    faults: &FaultState,
    spec: &AttitudeObjectiveSpec,
) -> Result<f64, PlannerError> {
    faults.check_layout(layout)?;
    spec.validate(layout)?;
    let points = weighted_rotors(layout, faults, spec);
    let scale = 1.0 + points.iter().map(|(p, u)| p.norm().max(*u)).fold(0.0, f64::max);
    let tol = 1e-9 * scale;
    for period in [PI / 2.0, PI] {
        let r = Rotation3::from_axis_angle(&Vector3::z_axis(), period);
        let invariant = points.iter().all(|(p, u)| {
            let q = (r * Vector3::new(p.x, p.y, 0.0)).xy();
            points
                .iter()
                .any(|(p2, u2)| (q - p2).norm() <= tol && (u - u2).abs() <= tol)
        });
        if invariant {
            return Ok(period);
        }
    }
    Ok(TAU)
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::assembly::UnitSpec;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn wrap_lands_in_range(a in -100.0f64..100.0) {
            let w = wrap_angle(a);
            prop_assert!((-PI..PI).contains(&w));
            let turns = (a - w) / TAU;
            prop_assert!((turns - turns.round()).abs() < 1e-9);
        }

        #[test]
        fn objective_repeats_every_quarter_turn(c in 1i32..5, r in 1i32..4, psi in -PI..PI) {
            let layout = AssemblyLayout::grid(c, r, 0.3, UnitSpec::default()).unwrap();
            let faults = FaultState::healthy(layout.n());
            let spec = AttitudeObjectiveSpec::for_layout(&layout, 1.0);
            let at = |yaw: f64| {
                let tau = tau_pm_max(&layout, &faults, &Vector3::new(0.0, 0.0, yaw), &spec).unwrap();
                attitude_objective(&tau, &spec)
            };
            let (a, b) = (at(psi), at(psi + PI / 2.0));
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        }
    }
}
