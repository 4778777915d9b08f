//! Fault-tolerant thrust allocation.
//!
//! Three schemes share the same per-unit mixer:
//!
//! * [`solve_unit_failure`]: variance-minimizing unit thrusts over the units
//!   that still fly, with lever-arm moment constraints (and optionally the
//!   signed torque targets), solved as a bounded QP.
//! * [`partial_realloc`]: faulty units keep their nominal commands; the
//!   healthy units absorb the thrust and moment the faulty ones lose.
//! * [`full_realloc`]: each degraded unit is first rebalanced internally so
//!   it produces no roll/pitch moment about its own center, then the healthy
//!   units absorb whatever it still cannot deliver.

use nalgebra::{DMatrix, DVector, Matrix4, Vector2, Vector3, Vector4};
use thiserror::Error;

use crate::assembly::{
    efficiency_matrix_over, lever_moment, AssemblyError, AssemblyLayout, UnitSpec,
    ROTORS_PER_UNIT,
};
use crate::fault::{FaultError, FaultState};
use crate::qp::{BoundedLsq, QpError};

/// Offset added to lever arms when forming the adaptive allocation weights.
pub const DEFAULT_MU: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllocationError {
    #[error("no healthy unit left to allocate to")]
    NoHealthyUnits,
    #[error("commanded collective thrust must be non-negative, got {0}")]
    NegativeForce(f64),
    #[error("signed moment targets are inconsistent: {0}")]
    BadMomentSplit(String),
    #[error("allocation infeasible: {0}")]
    Infeasible(String),
    #[error("KKT system singular")]
    Singular,
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Fault(#[from] FaultError),
}

impl From<QpError> for AllocationError {
    fn from(e: QpError) -> Self {
        match e {
            QpError::SingularKkt => AllocationError::Singular,
            other => AllocationError::Infeasible(other.to_string()),
        }
    }
}

/// Desired collective wrench in the body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WrenchCommand {
    pub force: f64,
    pub moment: Vector3<f64>,
    /// Optional split targets `[Mx+, Mx−, My+, My−]`.
    pub moment_pm: Option<[f64; 4]>,
}

impl WrenchCommand {
    pub fn new(force: f64, moment: Vector3<f64>) -> Self {
        WrenchCommand {
            force,
            moment,
            moment_pm: None,
        }
    }

    pub fn hover(mass: f64, g: f64) -> Self {
        Self::new(mass * g, Vector3::zeros())
    }

    pub fn with_split(mut self, pm: [f64; 4]) -> Self {
        self.moment_pm = Some(pm);
        self
    }

    pub fn scaled(&self, k: f64) -> Self {
        WrenchCommand {
            force: self.force * k,
            moment: self.moment * k,
            moment_pm: self.moment_pm.map(|m| m.map(|v| v * k)),
        }
    }

    fn validate(&self) -> Result<(), AllocationError> {
        if !(self.force >= 0.0) {
            return Err(AllocationError::NegativeForce(self.force));
        }
        if let Some([xp, xm, yp, ym]) = self.moment_pm {
            if xp < 0.0 || xm > 0.0 || yp < 0.0 || ym > 0.0 {
                return Err(AllocationError::BadMomentSplit(
                    "need Mx+ ≥ 0 ≥ Mx− and My+ ≥ 0 ≥ My−".into(),
                ));
            }
            let tol = 1e-9 * (1.0 + self.moment.amax());
            if (xp + xm - self.moment.x).abs() > tol || (yp + ym - self.moment.y).abs() > tol {
                return Err(AllocationError::BadMomentSplit(
                    "split parts must sum to Mx and My".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    /// Commanded thrust per unit (sum of its rotor commands), newtons.
    pub unit_thrust: Vec<f64>,
    /// Commanded thrust per rotor, newtons.
    pub rotor_thrust: Vec<[f64; ROTORS_PER_UNIT]>,
    /// Squared rotor speeds for the commanded thrusts, rad²/s².
    pub omega_sq: Vec<[f64; ROTORS_PER_UNIT]>,
    /// A rotor command was clipped to its limits.
    pub saturated: bool,
    /// A degraded unit could not hold its share while staying balanced.
    pub degraded: bool,
    /// Commanded minus expected delivered wrench, after faults and clipping.
    pub residual_force: f64,
    pub residual_moment: Vector3<f64>,
}

/// Per-unit mixer: maps a unit wrench `[F, Mx, My, Mz]` about the unit
/// center to the four squared rotor speeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingMatrix {
    pub to_omega_sq: Matrix4<f64>,
    pub to_wrench: Matrix4<f64>,
    thrust_coeff: f64,
}

impl MixingMatrix {
    pub fn for_unit(unit: &UnitSpec) -> Self {
        let k = unit.thrust_coeff;
        let to_wrench = Matrix4::from_fn(|r, j| {
            let rotor = &unit.rotors[j];
            k * match r {
                0 => 1.0,
                1 => rotor.offset[1],
                2 => -rotor.offset[0],
                _ => rotor.spin * rotor.k_tau,
            }
        });
        let to_omega_sq = to_wrench
            .try_inverse()
            .expect("validated unit layouts give an invertible mixer");
        MixingMatrix {
            to_omega_sq,
            to_wrench,
            thrust_coeff: k,
        }
    }

    pub fn thrust_coeff(&self) -> f64 {
        self.thrust_coeff
    }

    /// Rotor thrusts, unclipped.
    pub fn rotor_thrusts(&self, wrench: &Vector4<f64>) -> [f64; ROTORS_PER_UNIT] {
        let w = self.to_omega_sq * wrench;
        std::array::from_fn(|j| w[j] * self.thrust_coeff)
    }
}

/// `ω² = P·w`, with negative entries clamped to zero. The flag reports a clamp.
pub fn rotor_mix(mix: &MixingMatrix, unit_wrench: &Vector4<f64>) -> ([f64; ROTORS_PER_UNIT], bool) {
    let w = mix.to_omega_sq * unit_wrench;
    let mut saturated = false;
    let out = std::array::from_fn(|j| {
        if w[j] < 0.0 {
            saturated = true;
            0.0
        } else {
            w[j]
        }
    });
    (out, saturated)
}

/// Clips commands into `[0, f_max]` and assembles the result.
fn finish(
    layout: &AssemblyLayout,
    faults: &FaultState,
    cmd: &WrenchCommand,
    mut rotor_thrust: Vec<[f64; ROTORS_PER_UNIT]>,
    degraded: bool,
) -> AllocationResult {
    let unit = layout.unit();
    let mut saturated = false;
    for row in rotor_thrust.iter_mut() {
        for (j, f) in row.iter_mut().enumerate() {
            let fmax = unit.rotors[j].f_max;
            // tolerate round-off at the limits
            if *f < -1e-12 || *f > fmax * (1.0 + 1e-12) {
                saturated = true;
            }
            *f = f.clamp(0.0, fmax);
        }
    }
    let k = unit.thrust_coeff;
    let omega_sq = rotor_thrust.iter().map(|r| r.map(|f| f / k)).collect();
    let unit_thrust = rotor_thrust.iter().map(|r| r.iter().sum()).collect();
    let (force, moment) = layout.wrench_of(&faults.apply(&rotor_thrust));
    AllocationResult {
        unit_thrust,
        rotor_thrust,
        omega_sq,
        saturated,
        degraded,
        residual_force: cmd.force - force,
        residual_moment: cmd.moment - moment,
    }
}

/// Rows for `Σ x·u = −My` and `Σ y·u = Mx`, or the four signed splits.
fn lever_rows(positions: &[Vector2<f64>], cmd: &WrenchCommand) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    match cmd.moment_pm {
        None => {
            rows.push(positions.iter().map(|p| p.x).collect());
            rhs.push(-cmd.moment.y);
            rows.push(positions.iter().map(|p| p.y).collect());
            rhs.push(cmd.moment.x);
        }
        Some([xp, xm, yp, ym]) => {
            // Σ y·u splits into the y<0 part (Mx−) and y>0 part (Mx+);
            // −Σ x·u splits into the x<0 part (My+) and x>0 part (My−).
            rows.push(positions.iter().map(|p| p.x.min(0.0)).collect());
            rhs.push(-yp);
            rows.push(positions.iter().map(|p| p.y.min(0.0)).collect());
            rhs.push(xm);
            rows.push(positions.iter().map(|p| p.x.max(0.0)).collect());
            rhs.push(-ym);
            rows.push(positions.iter().map(|p| p.y.max(0.0)).collect());
            rhs.push(xp);
        }
    }
    (rows, rhs)
}

/// Variance-minimizing unit thrusts when whole units have failed.
///
/// Failed units get zero thrust. Each remaining unit is bounded to
/// `[0, Σ η·f_max]`. Yaw is shared equally through the unit mixers.
pub fn solve_unit_failure(
    layout: &AssemblyLayout,
    faults: &FaultState,
    cmd: &WrenchCommand,
) -> Result<AllocationResult, AllocationError> {
    faults.check_layout(layout)?;
    cmd.validate()?;
    let flying: Vec<usize> = (0..layout.n()).filter(|&i| !faults.is_failed(i)).collect();
    if flying.is_empty() {
        return Err(AllocationError::NoHealthyUnits);
    }
    let k = flying.len();
    let positions: Vec<Vector2<f64>> = flying.iter().map(|&i| layout.position(i)).collect();

    let (lever, lever_rhs) = lever_rows(&positions, cmd);
    let m = lever.len() + 1;
    let mut a = DMatrix::zeros(m, k);
    let mut b = DVector::zeros(m);
    a.row_mut(0).fill(1.0);
    b[0] = cmd.force;
    for (r, (row, rhs)) in lever.iter().zip(&lever_rhs).enumerate() {
        for c in 0..k {
            a[(r + 1, c)] = row[c];
        }
        b[r + 1] = *rhs;
    }
    let unit = layout.unit();
    let hi = DVector::from_iterator(
        k,
        flying.iter().map(|&i| {
            let eta = faults.eta(i);
            unit.rotors.iter().zip(eta).map(|(r, e)| r.f_max * e).sum()
        }),
    );
    let sol = BoundedLsq::min_norm(a, b, DVector::zeros(k), hi).solve()?;

    let mix = MixingMatrix::for_unit(unit);
    let yaw_share = cmd.moment.z / k as f64;
    let mut rotor_thrust = vec![[0.0; ROTORS_PER_UNIT]; layout.n()];
    for (c, &i) in flying.iter().enumerate() {
        rotor_thrust[i] = mix.rotor_thrusts(&Vector4::new(sol.x[c], 0.0, 0.0, yaw_share));
    }
    // The unit QP plans on commanded thrust; no η correction here.
    Ok(finish(layout, &FaultState::healthy(layout.n()), cmd, rotor_thrust, false))
}

/// Distributes a wrench over `units` with the adaptive efficiency weights.
///
/// Every unit starts from an equal thrust share, the roll/pitch moment not
/// already produced by those shares is spread through the lever-arm
/// weights, and the result is projected onto the exact force and moment
/// constraints. Channels with no lever arm (a single unit, or every unit on
/// one axis) fall back to the units' own rotors, as does yaw.
fn distribute(
    layout: &AssemblyLayout,
    units: &[usize],
    force: f64,
    moment: Vector3<f64>,
    mu: f64,
) -> Result<Vec<Vector4<f64>>, AllocationError> {
    let k = units.len();
    if k == 0 {
        return Err(AllocationError::NoHealthyUnits);
    }
    let positions: Vec<Vector2<f64>> = units.iter().map(|&i| layout.position(i)).collect();
    let scale = layout.pitch();
    let roll_lever = positions.iter().any(|p| p.y.abs() > 1e-9 * scale);
    let pitch_lever = positions.iter().any(|p| p.x.abs() > 1e-9 * scale);

    let share = force / k as f64;
    let baseline = positions
        .iter()
        .fold(Vector3::zeros(), |acc, p| acc + lever_moment(p, share));
    let rest = moment - baseline;

    let mut u0 = DVector::zeros(k);
    for c in 0..k {
        let e = efficiency_matrix_over(&positions, c, mu)?;
        u0[c] = e[(0, 0)] * force + e[(1, 1)] * rest.x + e[(2, 2)] * rest.y;
    }

    let mut rows: Vec<Vec<f64>> = vec![vec![1.0; k]];
    let mut rhs = vec![force];
    if pitch_lever {
        rows.push(positions.iter().map(|p| p.x).collect());
        rhs.push(-moment.y);
    }
    if roll_lever {
        rows.push(positions.iter().map(|p| p.y).collect());
        rhs.push(moment.x);
    }
    let a = DMatrix::from_fn(rows.len(), k, |r, c| rows[r][c]);
    let b = DVector::from_vec(rhs);
    let inf = DVector::from_element(k, f64::INFINITY);
    let projected = BoundedLsq {
        g: -u0,
        a,
        b,
        lo: -inf.clone(),
        hi: inf,
    }
    .solve()?;

    let own_roll = if roll_lever { 0.0 } else { moment.x / k as f64 };
    let own_pitch = if pitch_lever { 0.0 } else { moment.y / k as f64 };
    let own_yaw = moment.z / k as f64;
    Ok((0..k)
        .map(|c| Vector4::new(projected.x[c], own_roll, own_pitch, own_yaw))
        .collect())
}

/// Fault-free adaptive allocation over every unit.
pub fn nominal_allocation(
    layout: &AssemblyLayout,
    cmd: &WrenchCommand,
) -> Result<AllocationResult, AllocationError> {
    cmd.validate()?;
    let all: Vec<usize> = (0..layout.n()).collect();
    let wrenches = distribute(layout, &all, cmd.force, cmd.moment, DEFAULT_MU)?;
    let mix = MixingMatrix::for_unit(layout.unit());
    let rotor_thrust = wrenches.iter().map(|w| mix.rotor_thrusts(w)).collect();
    Ok(finish(layout, &FaultState::healthy(layout.n()), cmd, rotor_thrust, false))
}

/// Hands the wrench the faulty units will not deliver to the healthy units.
fn compensate(
    layout: &AssemblyLayout,
    faults: &FaultState,
    cmd: &WrenchCommand,
    faulty_cmd: Vec<[f64; ROTORS_PER_UNIT]>,
    degraded: bool,
) -> Result<AllocationResult, AllocationError> {
    let healthy = faults.healthy_units();
    if healthy.is_empty() {
        return Err(AllocationError::NoHealthyUnits);
    }
    let delivered = faults.apply(&faulty_cmd);
    let (f_faulty, m_faulty) = layout.wrench_of(&delivered);
    let wrenches = distribute(
        layout,
        &healthy,
        cmd.force - f_faulty,
        cmd.moment - m_faulty,
        DEFAULT_MU,
    )?;
    let mix = MixingMatrix::for_unit(layout.unit());
    let mut rotor_thrust = faulty_cmd;
    for (w, &i) in wrenches.iter().zip(&healthy) {
        rotor_thrust[i] = mix.rotor_thrusts(w);
    }
    Ok(finish(layout, faults, cmd, rotor_thrust, degraded))
}

/// Faulty units keep `nominal` commands; healthy units make up the difference.
pub fn partial_realloc(
    layout: &AssemblyLayout,
    faults: &FaultState,
    cmd: &WrenchCommand,
    nominal: &[[f64; ROTORS_PER_UNIT]],
) -> Result<AllocationResult, AllocationError> {
    faults.check_layout(layout)?;
    cmd.validate()?;
    if nominal.len() != layout.n() {
        return Err(AssemblyError::LengthMismatch {
            expected: layout.n(),
            got: nominal.len(),
        }
        .into());
    }
    let faulty_cmd = (0..layout.n())
        .map(|i| {
            if faults.is_faulty(i) && !faults.is_failed(i) {
                nominal[i]
            } else {
                [0.0; 4]
            }
        })
        .collect();
    compensate(layout, faults, cmd, faulty_cmd, false)
}

/// Outcome of rebalancing one degraded unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalancedUnit {
    /// Delivered rotor thrusts (after η), newtons.
    pub thrust: [f64; ROTORS_PER_UNIT],
    /// Commands that produce them.
    pub command: [f64; ROTORS_PER_UNIT],
    /// Could not reach the requested total.
    pub degraded: bool,
}

fn balance_problem(unit: &UnitSpec, eta: &[f64; 4], total: f64) -> BoundedLsq {
    let a = DMatrix::from_fn(3, ROTORS_PER_UNIT, |r, j| match r {
        0 => unit.rotors[j].offset[0],
        1 => unit.rotors[j].offset[1],
        _ => 1.0,
    });
    let b = DVector::from_vec(vec![0.0, 0.0, total]);
    let hi = DVector::from_fn(ROTORS_PER_UNIT, |j, _| eta[j] * unit.rotors[j].f_max);
    BoundedLsq::min_norm(a, b, DVector::zeros(ROTORS_PER_UNIT), hi)
}

/// Minimum-variance delivered thrusts of one unit with zero roll and pitch
/// moment about its own center and the requested total.
///
/// If the total is out of reach under the `η·f_max` caps, the largest
/// balanced total is used instead and the unit is flagged degraded.
pub fn balance_faulty_unit(unit: &UnitSpec, eta: &[f64; 4], total: f64) -> BalancedUnit {
    let solve = |t: f64| balance_problem(unit, eta, t).solve().ok();
    let (x, degraded) = match solve(total) {
        Some(s) => (s.x, false),
        None => {
            let (mut lo, mut hi) = (0.0, total);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if solve(mid).is_some() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let x = solve(lo).map(|s| s.x).unwrap_or_else(|| DVector::zeros(4));
            (x, true)
        }
    };
    let thrust: [f64; 4] =
        std::array::from_fn(|j| x[j].clamp(0.0, eta[j] * unit.rotors[j].f_max));
    let command = std::array::from_fn(|j| if eta[j] > 0.0 { thrust[j] / eta[j] } else { 0.0 });
    BalancedUnit {
        thrust,
        command,
        degraded,
    }
}

/// Two-stage reallocation: rebalance each degraded unit, then compensate
/// its remaining shortfall (including any yaw imbalance) with healthy units.
pub fn full_realloc(
    layout: &AssemblyLayout,
    faults: &FaultState,
    cmd: &WrenchCommand,
) -> Result<AllocationResult, AllocationError> {
    faults.check_layout(layout)?;
    cmd.validate()?;
    let nominal = nominal_allocation(layout, cmd)?;
    let mut degraded = false;
    let faulty_cmd = (0..layout.n())
        .map(|i| {
            if !faults.is_faulty(i) || faults.is_failed(i) {
                return [0.0; 4];
            }
            let target = nominal.unit_thrust[i];
            let b = balance_faulty_unit(layout.unit(), &faults.eta(i), target);
            degraded |= b.degraded;
            b.command
        })
        .collect();
    compensate(layout, faults, cmd, faulty_cmd, degraded)
}

/// Which reallocation the flight loop uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FtcMode {
    /// Fault-unaware nominal allocation.
    None,
    Partial,
    Full,
}

/// Dispatches on `mode`.
pub fn allocate(
    mode: FtcMode,
    layout: &AssemblyLayout,
    faults: &FaultState,
    cmd: &WrenchCommand,
) -> Result<AllocationResult, AllocationError> {
    match mode {
        FtcMode::None => {
            let mut r = nominal_allocation(layout, cmd)?;
            let (f, m) = layout.wrench_of(&faults.apply(&r.rotor_thrust));
            r.residual_force = cmd.force - f;
            r.residual_moment = cmd.moment - m;
            Ok(r)
        }
        FtcMode::Partial => {
            let nominal = nominal_allocation(layout, cmd)?;
            partial_realloc(layout, faults, cmd, &nominal.rotor_thrust)
        }
        FtcMode::Full => full_realloc(layout, faults, cmd),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::build_assembly;
    use approx::assert_relative_eq;

    fn grid(c: i32, r: i32) -> AssemblyLayout {
        AssemblyLayout::grid(c, r, 0.5, UnitSpec::default()).unwrap()
    }

    fn variance(u: &[f64]) -> f64 {
        let m = u.iter().sum::<f64>() / u.len() as f64;
        u.iter().map(|x| (x - m).powi(2)).sum::<f64>() / u.len() as f64
    }

    #[test]
    fn symmetric_equal_split() {
        let l = grid(3, 2);
        let r = solve_unit_failure(&l, &FaultState::healthy(6), &WrenchCommand::hover(6.0, 9.81)).unwrap();
        for u in &r.unit_thrust {
            assert_relative_eq!(*u, 9.81, epsilon = 1e-12);
        }
        assert!(!r.saturated);
    }

    #[test]
    fn line_with_end_failed() {
        let l = grid(3, 1);
        let f = FaultState::healthy(3).mark_unit_failed(0).unwrap();
        let r = solve_unit_failure(&l, &f, &WrenchCommand::new(9.0, Vector3::zeros())).unwrap();
        assert_relative_eq!(r.unit_thrust[0], 0.0);
        assert_relative_eq!(r.unit_thrust[1], 9.0, epsilon = 1e-9);
        assert_relative_eq!(r.unit_thrust[2], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn corner_failed_satisfies_constraints() {
        let l = grid(3, 2);
        let f = FaultState::healthy(6).mark_unit_failed(0).unwrap();
        let r = solve_unit_failure(&l, &f, &WrenchCommand::hover(6.0, 9.81)).unwrap();
        let sum: f64 = r.unit_thrust.iter().sum();
        assert_relative_eq!(sum, 58.86, epsilon = 1e-9);
        let m: Vector2<f64> = (0..6).map(|i| l.position(i) * r.unit_thrust[i]).sum();
        assert!(m.norm() < 1e-9);
        assert!(r.unit_thrust.iter().all(|&u| u >= 0.0));
    }

    #[test]
    fn unreachable_moment_is_infeasible() {
        // only the right-hand unit flies; zero moment needs thrust on the left
        let l = grid(2, 1);
        let f = FaultState::healthy(2).mark_unit_failed(0).unwrap();
        let e = solve_unit_failure(&l, &f, &WrenchCommand::new(5.0, Vector3::zeros())).unwrap_err();
        assert!(matches!(e, AllocationError::Infeasible(_)));
    }

    #[test]
    fn split_targets_are_honored() {
        let l = grid(3, 2);
        // My = −Σ x·u; ask for My+ = 2 from the x<0 side and My− = −1 from the x>0 side
        let cmd = WrenchCommand::new(58.86, Vector3::new(0.0, 1.0, 0.0)).with_split([0.0, 0.0, 2.0, -1.0]);
        // x<0 units: Σ x·u = −2; x>0 units: Σ x·u = 1; Σ y·u = 0 on both sides
        let r = solve_unit_failure(&l, &FaultState::healthy(6), &cmd);
        // y-splits: Mx+ = 0 and Mx− = 0 demand zero thrust on every off-axis unit
        assert!(r.is_err());

        let l = grid(3, 1);
        let cmd = WrenchCommand::new(20.0, Vector3::new(0.0, 1.0, 0.0)).with_split([0.0, 0.0, 3.0, -2.0]);
        let r = solve_unit_failure(&l, &FaultState::healthy(3), &cmd).unwrap();
        assert_relative_eq!(-0.5 * r.unit_thrust[0], -3.0, epsilon = 1e-9);
        assert_relative_eq!(0.5 * r.unit_thrust[2], 2.0, epsilon = 1e-9);
        assert_relative_eq!(r.unit_thrust.iter().sum::<f64>(), 20.0, epsilon = 1e-9);

        let bad = WrenchCommand::new(1.0, Vector3::zeros()).with_split([1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            solve_unit_failure(&l, &FaultState::healthy(3), &bad),
            Err(AllocationError::BadMomentSplit(_))
        ));
    }

    #[test]
    fn mixer_examples() {
        let unit = UnitSpec::default();
        let mix = MixingMatrix::for_unit(&unit);
        let (w, sat) = rotor_mix(&mix, &Vector4::new(9.81, 0.0, 0.0, 0.0));
        assert!(!sat);
        for wj in &w[1..] {
            assert_relative_eq!(*wj, w[0], max_relative = 1e-12);
        }
        let (w, sat) = rotor_mix(&mix, &Vector4::new(9.81, 0.0, 0.0, 0.05));
        assert!(!sat);
        let base = 9.81 / 4.0 / unit.thrust_coeff;
        for (wj, rotor) in w.iter().zip(&unit.rotors) {
            assert!((wj - base) * rotor.spin > 0.0);
        }
        let (_, sat) = rotor_mix(&mix, &Vector4::new(0.0, 0.0, 0.0, 0.05));
        assert!(sat);
        let v = Vector4::new(7.3, 0.21, -0.13, 0.02);
        let back = mix.to_wrench * (mix.to_omega_sq * v);
        assert!((back - v).amax() < 1e-10);
    }

    #[test]
    fn partial_without_faults_matches_nominal() {
        let l = grid(3, 2);
        let cmd = WrenchCommand::hover(6.0, 9.81);
        let nominal = nominal_allocation(&l, &cmd).unwrap();
        let p = partial_realloc(&l, &FaultState::healthy(6), &cmd, &nominal.rotor_thrust).unwrap();
        assert_eq!(p.rotor_thrust, nominal.rotor_thrust);
        let w0 = p.omega_sq[0][0];
        for row in &p.omega_sq {
            for w in row {
                assert_relative_eq!(*w, w0, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn partial_degraded_rotor_conserves_wrench() {
        let l = grid(3, 2);
        let cmd = WrenchCommand::hover(6.0, 9.81);
        let f = FaultState::healthy(6).set_rotor_eta(1, 1, 0.5).unwrap();
        let nominal = nominal_allocation(&l, &cmd).unwrap();
        let p = partial_realloc(&l, &f, &cmd, &nominal.rotor_thrust).unwrap();
        assert!(!p.saturated);
        assert!(p.residual_force.abs() < 1e-9);
        assert!(p.residual_moment.amax() < 1e-9);
        let healthy_total: f64 = f.healthy_units().iter().map(|&i| p.unit_thrust[i]).sum();
        // healthy units pick up exactly the half rotor's lost 9.81/8 N
        assert_relative_eq!(healthy_total, 5.0 * 9.81 + 9.81 / 8.0, epsilon = 1e-9);
    }

    #[test]
    fn partial_unit_failed_matches_unit_qp() {
        let l = grid(3, 2);
        let cmd = WrenchCommand::hover(6.0, 9.81);
        let f = FaultState::healthy(6).mark_unit_failed(1).unwrap();
        let nominal = nominal_allocation(&l, &cmd).unwrap();
        let p = partial_realloc(&l, &f, &cmd, &nominal.rotor_thrust).unwrap();
        let q = solve_unit_failure(&l, &f, &cmd).unwrap();
        for i in 0..6 {
            assert_relative_eq!(p.unit_thrust[i], q.unit_thrust[i], epsilon = 1e-4);
        }
    }

    #[test]
    fn balance_nominal_and_degraded() {
        let unit = UnitSpec::default();
        let b = balance_faulty_unit(&unit, &[1.0; 4], 9.81);
        for f in b.thrust {
            assert_relative_eq!(f, 9.81 / 4.0, epsilon = 1e-12);
        }
        assert!(!b.degraded);

        // rotor 1 capped at 2.25 N: its opposite rotor 3 matches it, 0 and 2 carry the rest
        let b = balance_faulty_unit(&unit, &[1.0, 0.5, 1.0, 1.0], 9.81);
        assert_relative_eq!(b.thrust[1], 2.25, epsilon = 1e-9);
        assert_relative_eq!(b.thrust[3], 2.25, epsilon = 1e-9);
        assert_relative_eq!(b.thrust[0], (9.81 - 4.5) / 2.0, epsilon = 1e-9);
        assert_relative_eq!(b.command[1], 4.5, epsilon = 1e-9);
        assert!(!b.degraded);

        // adjacent rotors at half: balanced total tops out at 9 N
        let b = balance_faulty_unit(&unit, &[0.5, 0.5, 1.0, 1.0], 9.81);
        assert!(b.degraded);
        assert_relative_eq!(b.thrust.iter().sum::<f64>(), 9.0, epsilon = 1e-6);

        // two adjacent dead rotors: nothing balanced is left
        let b = balance_faulty_unit(&unit, &[0.0, 0.0, 1.0, 1.0], 9.81);
        assert!(b.degraded);
        assert!(b.thrust.iter().sum::<f64>() < 1e-9);
    }

    #[test]
    fn full_realloc_cases() {
        let l = grid(3, 2);
        let cmd = WrenchCommand::hover(6.0, 9.81);
        let healthy = full_realloc(&l, &FaultState::healthy(6), &cmd).unwrap();
        let nominal = nominal_allocation(&l, &cmd).unwrap();
        assert_eq!(healthy.rotor_thrust, nominal.rotor_thrust);

        for eta in [[1.0, 0.5, 1.0, 1.0], [0.5, 0.5, 1.0, 1.0]] {
            let mut f = FaultState::healthy(6);
            for (j, e) in eta.iter().enumerate() {
                f = f.set_rotor_eta(1, j, *e).unwrap();
            }
            let r = full_realloc(&l, &f, &cmd).unwrap();
            assert!(!r.saturated, "{r:#?}");
            assert!(r.residual_force.abs() < 1e-9, "{r:?}");
            assert!(r.residual_moment.amax() < 1e-9, "{r:?}");
        }
    }

    #[test]
    fn single_unit_moments_use_own_rotors() {
        let l = build_assembly(&[[0, 0]], 0.5, UnitSpec::default()).unwrap();
        let cmd = WrenchCommand::new(9.81, Vector3::new(0.1, -0.05, 0.01));
        let r = nominal_allocation(&l, &cmd).unwrap();
        assert!(r.residual_moment.amax() < 1e-12);
        assert!(r.residual_force.abs() < 1e-12);
    }

    #[test]
    fn hover_variance_zero() {
        let l = grid(2, 2);
        let r = nominal_allocation(&l, &WrenchCommand::hover(4.0, 9.81)).unwrap();
        assert!(variance(&r.unit_thrust) < 1e-20);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn reallocation_delivers_the_command(
            unit in 0usize..6,
            rotor in 0usize..4,
            eta in 0.5f64..1.0,
            mx in -0.3f64..0.3,
            my in -0.3f64..0.3,
            mz in -0.05f64..0.05,
        ) {
            let layout = AssemblyLayout::grid(3, 2, 0.3, UnitSpec::default()).unwrap();
            let faults = FaultState::healthy(6).set_rotor_eta(unit, rotor, eta).unwrap();
            let cmd = WrenchCommand::new(6.0 * 9.81, Vector3::new(mx, my, mz));
            for mode in [FtcMode::Partial, FtcMode::Full] {
                let r = allocate(mode, &layout, &faults, &cmd).unwrap();
                prop_assume!(!r.saturated && !r.degraded);
                let (f, m) = layout.wrench_of(&faults.apply(&r.rotor_thrust));
                prop_assert!((f - cmd.force).abs() < 1e-6);
                prop_assert!((m - cmd.moment).amax() < 1e-6, "{mode:?} {m:?}");
            }
        }

        #[test]
        fn unit_shares_respect_caps(unit in 0usize..6, fx in 0.3f64..1.3) {
            let layout = AssemblyLayout::grid(3, 2, 0.3, UnitSpec::default()).unwrap();
            let faults = FaultState::healthy(6).mark_unit_failed(unit).unwrap();
            let cmd = WrenchCommand::hover(6.0 * fx, 9.81);
            if let Ok(r) = solve_unit_failure(&layout, &faults, &cmd) {
                prop_assert_eq!(r.unit_thrust[unit], 0.0);
                prop_assert!(r.unit_thrust.iter().all(|u| *u >= -1e-9 && *u <= 18.0 + 1e-9));
                prop_assert!((r.unit_thrust.iter().sum::<f64>() - cmd.force).abs() < 1e-9);
            }
        }
    }
}
