//! Assembly geometry: unit placement on a planar grid, aggregate inertia,
//! and the signed torque-capacity operator.
//!
//! Frame conventions used throughout the crate: body z points up and every
//! rotor thrusts along +z. A thrust `f` applied at planar point `(x, y)`
//! produces the moment `(y·f, −x·f, 0)`; a rotor additionally produces the
//! reaction yaw moment `spin·k_tau·f`.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of rotors carried by every unit.
pub const ROTORS_PER_UNIT: usize = 4;

/// Grid cell as `[row, col]`. Columns map to +x, rows map to +y.
pub type Cell = [i32; 2];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("assembly has no cells")]
    Empty,
    #[error("cell {0:?} appears more than once")]
    DuplicateCell(Cell),
    #[error("cells are not 4-connected: {0:?} cannot be reached from {1:?}")]
    Disconnected(Cell, Cell),
    #[error("pitch must be positive, got {0}")]
    InvalidPitch(f64),
    #[error("invalid unit: {0}")]
    InvalidUnit(String),
    #[error("thrust entry {index} is negative ({value})")]
    NegativeThrust { index: usize, value: f64 },
    #[error("expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("unit index {index} out of range for {n} units")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("mu must be strictly positive, got {0}")]
    InvalidMu(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotorSpec {
    /// Rotor position in the unit frame, meters.
    pub offset: [f64; 2],
    /// Yaw reaction sign, +1 or −1.
    pub spin: f64,
    /// Maximum thrust, newtons.
    pub f_max: f64,
    /// Yaw moment per newton of thrust, meters.
    pub k_tau: f64,
}

impl RotorSpec {
    pub fn offset(&self) -> Vector2<f64> {
        Vector2::new(self.offset[0], self.offset[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSpec {
    pub mass: f64,
    /// Unit inertia about its own center, row-major 3×3, kg·m².
    pub inertia: [[f64; 3]; 3],
    /// Distance from unit center to each rotor, meters.
    pub arm: f64,
    /// Thrust per squared rotor speed, N/(rad/s)².
    pub thrust_coeff: f64,
    pub rotors: Vec<RotorSpec>,
}

impl UnitSpec {
    /// Four rotors on the unit axes (+x, +y, −x, −y) with alternating spin.
    pub fn cross(
        mass: f64,
        arm: f64,
        f_max: f64,
        k_tau: f64,
        inertia_diag: [f64; 3],
        thrust_coeff: f64,
    ) -> Self {
        let dirs = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)];
        let rotors = dirs
            .iter()
            .enumerate()
            .map(|(j, &(cx, cy))| RotorSpec {
                offset: [arm * cx, arm * cy],
                spin: if j % 2 == 0 { 1.0 } else { -1.0 },
                f_max,
                k_tau,
            })
            .collect();
        let [ixx, iyy, izz] = inertia_diag;
        UnitSpec {
            mass,
            inertia: [[ixx, 0.0, 0.0], [0.0, iyy, 0.0], [0.0, 0.0, izz]],
            arm,
            thrust_coeff,
            rotors,
        }
    }

    pub fn inertia_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.inertia[r][c])
    }

    /// Hover thrust of one unit under gravity `g`.
    pub fn hover_thrust(&self, g: f64) -> f64 {
        self.mass * g
    }

    pub fn max_thrust(&self) -> f64 {
        self.rotors.iter().map(|r| r.f_max).sum()
    }

    pub fn validate(&self) -> Result<(), AssemblyError> {
        let bad = |msg: String| Err(AssemblyError::InvalidUnit(msg));
        if !(self.mass > 0.0) {
            return bad(format!("mass must be positive, got {}", self.mass));
        }
        if !(self.thrust_coeff > 0.0) {
            return bad(format!("thrust_coeff must be positive, got {}", self.thrust_coeff));
        }
        if self.rotors.len() != ROTORS_PER_UNIT {
            return bad(format!(
                "expected {ROTORS_PER_UNIT} rotors, got {}",
                self.rotors.len()
            ));
        }
        for (j, r) in self.rotors.iter().enumerate() {
            if !(r.f_max > 0.0) || !(r.k_tau > 0.0) {
                return bad(format!("rotor {j} needs f_max > 0 and k_tau > 0"));
            }
            if r.spin != 1.0 && r.spin != -1.0 {
                return bad(format!("rotor {j} spin must be ±1, got {}", r.spin));
            }
            let next = &self.rotors[(j + 1) % ROTORS_PER_UNIT];
            if r.spin == next.spin {
                return bad("rotor spins must alternate".into());
            }
        }
        let j = self.inertia_matrix();
        if (j - j.transpose()).abs().max() > 1e-12 || j.cholesky().is_none() {
            return bad("inertia must be symmetric positive definite".into());
        }
        Ok(())
    }
}

impl Default for UnitSpec {
    /// 1 kg unit, 12 cm arms, 4.5 N rotors.
    fn default() -> Self {
        UnitSpec::cross(1.0, 0.12, 4.5, 0.016, [0.01, 0.01, 0.018], 1.0e-5)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyLayout {
    cells: Vec<Cell>,
    pitch: f64,
    positions: Vec<Vector2<f64>>,
    unit: UnitSpec,
}

/// Builds a layout with unit positions measured from the cell centroid.
///
/// Cells are reordered row-major, so unit indices are stable for a given set.
pub fn build_assembly(
    cells: &[Cell],
    pitch: f64,
    unit: UnitSpec,
) -> Result<AssemblyLayout, AssemblyError> {
    if cells.is_empty() {
        return Err(AssemblyError::Empty);
    }
    if !(pitch > 0.0) || !pitch.is_finite() {
        return Err(AssemblyError::InvalidPitch(pitch));
    }
    unit.validate()?;

    let mut set = BTreeSet::new();
    for c in cells {
        if !set.insert(*c) {
            return Err(AssemblyError::DuplicateCell(*c));
        }
    }
    // BTreeSet of [row, col] iterates row-major.
    let ordered: Vec<Cell> = set.iter().copied().collect();

    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([ordered[0]]);
    seen.insert(ordered[0]);
    while let Some([r, c]) = queue.pop_front() {
        for nb in [[r + 1, c], [r - 1, c], [r, c + 1], [r, c - 1]] {
            if set.contains(&nb) && seen.insert(nb) {
                queue.push_back(nb);
            }
        }
    }
    if let Some(missing) = ordered.iter().find(|c| !seen.contains(*c)) {
        return Err(AssemblyError::Disconnected(*missing, ordered[0]));
    }

    let n = ordered.len() as f64;
    let (sr, sc) = ordered
        .iter()
        .fold((0.0, 0.0), |(a, b), c| (a + c[0] as f64, b + c[1] as f64));
    let (cr, cc) = (sr / n, sc / n);
    let positions = ordered
        .iter()
        .map(|c| Vector2::new(pitch * (c[1] as f64 - cc), pitch * (c[0] as f64 - cr)))
        .collect();

    Ok(AssemblyLayout {
        cells: ordered,
        pitch,
        positions,
        unit,
    })
}

impl AssemblyLayout {
    /// `cols × rows` rectangle of cells.
    pub fn grid(cols: i32, rows: i32, pitch: f64, unit: UnitSpec) -> Result<Self, AssemblyError> {
        let cells: Vec<Cell> = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| [r, c]))
            .collect();
        build_assembly(&cells, pitch, unit)
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn unit(&self) -> &UnitSpec {
        &self.unit
    }

    pub fn positions(&self) -> &[Vector2<f64>] {
        &self.positions
    }

    pub fn position(&self, i: usize) -> Vector2<f64> {
        self.positions[i]
    }

    /// Rotor position in the assembly frame.
    pub fn rotor_position(&self, unit: usize, rotor: usize) -> Vector2<f64> {
        self.positions[unit] + self.unit.rotors[rotor].offset()
    }

    /// Moment about the assembly origin of rotor `(unit, rotor)` producing `f`,
    /// including its yaw reaction.
    pub fn rotor_moment(&self, unit: usize, rotor: usize, f: f64) -> Vector3<f64> {
        let spec = &self.unit.rotors[rotor];
        let mut m = lever_moment(&self.rotor_position(unit, rotor), f);
        m.z += spec.spin * spec.k_tau * f;
        m
    }

    /// Net thrust and moment of per-rotor thrusts `[unit][rotor]`.
    pub fn wrench_of(&self, thrusts: &[[f64; ROTORS_PER_UNIT]]) -> (f64, Vector3<f64>) {
        let mut force = 0.0;
        let mut moment = Vector3::zeros();
        for (i, unit) in thrusts.iter().enumerate() {
            for (j, &f) in unit.iter().enumerate() {
                force += f;
                moment += self.rotor_moment(i, j, f);
            }
        }
        (force, moment)
    }

    /// Centroid of the cell set in raw cell coordinates `(col, row)`.
    pub fn cell_centroid(&self) -> Vector2<f64> {
        let n = self.n() as f64;
        self.cells
            .iter()
            .fold(Vector2::zeros(), |acc, c| acc + Vector2::new(c[1] as f64, c[0] as f64))
            / n
    }

    pub fn check_index(&self, index: usize) -> Result<(), AssemblyError> {
        if index >= self.n() {
            Err(AssemblyError::IndexOutOfRange { index, n: self.n() })
        } else {
            Ok(())
        }
    }
}

/// Moment about the assembly origin of a thrust `f` at planar point `p`.
pub fn lever_moment(p: &Vector2<f64>, f: f64) -> Vector3<f64> {
    Vector3::new(p.y * f, -p.x * f, 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InertialModel {
    pub total_mass: f64,
    pub inertia: Matrix3<f64>,
    pub com: Vector2<f64>,
}

/// Aggregates unit inertias with the parallel-axis theorem.
pub fn assembly_inertia(layout: &AssemblyLayout) -> InertialModel {
    let m = layout.unit.mass;
    let j_unit = layout.unit.inertia_matrix();
    let mut inertia = Matrix3::zeros();
    let mut com = Vector2::zeros();
    for p in &layout.positions {
        let r = Vector3::new(p.x, p.y, 0.0);
        inertia += j_unit + m * (r.norm_squared() * Matrix3::identity() - r * r.transpose());
        com += p;
    }
    let n = layout.n() as f64;
    InertialModel {
        total_mass: n * m,
        inertia,
        com: com / n,
    }
}

/// Signed torque capacities.
///
/// Stored as `[Σ min(x,0)·u, Σ min(y,0)·u, Σ max(x,0)·u, Σ max(y,0)·u]`;
/// the first two entries are never positive and the last two never negative.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TauPM(pub [f64; 4]);

impl TauPM {
    pub fn as_array(&self) -> [f64; 4] {
        self.0
    }

    /// Σ x·u recovered from the split entries.
    pub fn x_sum(&self) -> f64 {
        self.0[0] + self.0[2]
    }

    /// Σ y·u recovered from the split entries.
    pub fn y_sum(&self) -> f64 {
        self.0[1] + self.0[3]
    }

    /// Dot product with a weight vector.
    pub fn dot(&self, w: &[f64; 4]) -> f64 {
        self.0.iter().zip(w).map(|(a, b)| a * b).sum()
    }
}

/// Element-wise min/max split of lever arms weighted by non-negative thrusts.
pub fn signed_lever_sums<'a>(
    points: impl IntoIterator<Item = &'a Vector2<f64>>,
    thrusts: &[f64],
) -> TauPM {
    let mut out = [0.0; 4];
    for (p, &u) in points.into_iter().zip(thrusts) {
        out[0] += p.x.min(0.0) * u;
        out[1] += p.y.min(0.0) * u;
        out[2] += p.x.max(0.0) * u;
        out[3] += p.y.max(0.0) * u;
    }
    TauPM(out)
}

/// Signed torque capacity of per-unit thrusts `u_a`.
pub fn tau_pm(u_a: &[f64], layout: &AssemblyLayout) -> Result<TauPM, AssemblyError> {
    if u_a.len() != layout.n() {
        return Err(AssemblyError::LengthMismatch {
            expected: layout.n(),
            got: u_a.len(),
        });
    }
    if let Some((index, &value)) = u_a.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(AssemblyError::NegativeThrust { index, value });
    }
    Ok(signed_lever_sums(layout.positions.iter(), u_a))
}

/// Adaptive allocation parameters of one unit within `positions`.
///
/// Returns `diag([1/n, e_roll, e_pitch, 1/n])`. The torque entries are
/// thrust-per-moment coefficients: a unit adding `e_roll·Mx + e_pitch·My` to
/// its thrust makes the group reproduce `(Mx, My)` through the lever arms,
/// i.e. `Σ e_roll·y = 1` and `Σ e_pitch·(−x) = 1`. Each weight is
/// `|p + μ|` normalized by `Σ |p + μ|·|p|` over the group. A channel whose
/// levers are all zero gets zero entries.
pub fn efficiency_matrix_over(
    positions: &[Vector2<f64>],
    index: usize,
    mu: f64,
) -> Result<Matrix4<f64>, AssemblyError> {
    if !(mu > 0.0) {
        return Err(AssemblyError::InvalidMu(mu));
    }
    let n = positions.len();
    if index >= n {
        return Err(AssemblyError::IndexOutOfRange { index, n });
    }
    let weight = |coord: fn(&Vector2<f64>) -> f64| -> f64 {
        let denom: f64 = positions
            .iter()
            .map(|p| (coord(p) + mu).abs() * coord(p).abs())
            .sum();
        let c = coord(&positions[index]);
        if denom <= 0.0 || c == 0.0 {
            0.0
        } else {
            c.signum() * (c + mu).abs() / denom
        }
    };
    let e_roll = weight(|p| p.y);
    let e_pitch = -weight(|p| p.x);
    let share = 1.0 / n as f64;
    Ok(Matrix4::from_diagonal(&nalgebra::Vector4::new(
        share, e_roll, e_pitch, share,
    )))
}

pub fn efficiency_matrix(
    layout: &AssemblyLayout,
    index: usize,
    mu: f64,
) -> Result<Matrix4<f64>, AssemblyError> {
    efficiency_matrix_over(&layout.positions, index, mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit() -> UnitSpec {
        UnitSpec::default()
    }

    #[test]
    fn three_by_two_positions() {
        let l = AssemblyLayout::grid(3, 2, 0.5, unit()).unwrap();
        assert_eq!(l.n(), 6);
        for p in l.positions() {
            assert!([-0.5, 0.0, 0.5].iter().any(|x| (p.x - x).abs() < 1e-12));
            assert!([-0.25, 0.25].iter().any(|y| (p.y - y).abs() < 1e-12));
        }
        // row-major: first unit is row 0, col 0
        assert_relative_eq!(l.position(0), Vector2::new(-0.5, -0.25));
    }

    #[test]
    fn single_cell_at_origin() {
        let l = build_assembly(&[[3, 7]], 0.5, unit()).unwrap();
        assert_eq!(l.positions(), &[Vector2::zeros()]);
    }

    #[test]
    fn plus_shape() {
        let l = build_assembly(&[[0, 1], [1, 0], [1, 1], [1, 2], [2, 1]], 0.5, unit()).unwrap();
        let mut got: Vec<(i64, i64)> = l
            .positions()
            .iter()
            .map(|p| ((p.x * 1e6).round() as i64, (p.y * 1e6).round() as i64))
            .collect();
        got.sort();
        let mut want = vec![(0, 0), (500000, 0), (-500000, 0), (0, 500000), (0, -500000)];
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn rejects_bad_cell_sets() {
        assert_eq!(build_assembly(&[], 0.5, unit()), Err(AssemblyError::Empty));
        assert!(matches!(
            build_assembly(&[[0, 0], [0, 2]], 0.5, unit()),
            Err(AssemblyError::Disconnected(..))
        ));
        assert!(matches!(
            build_assembly(&[[0, 0], [1, 1]], 0.5, unit()),
            Err(AssemblyError::Disconnected(..))
        ));
        assert!(matches!(
            build_assembly(&[[0, 0], [0, 0]], 0.5, unit()),
            Err(AssemblyError::DuplicateCell(_))
        ));
        assert!(build_assembly(&[[0, 0]], 0.0, unit()).is_err());
    }

    #[test]
    fn rejects_bad_unit() {
        let mut u = unit();
        u.rotors[1].spin = 1.0;
        assert!(build_assembly(&[[0, 0]], 0.5, u).is_err());
        let mut u = unit();
        u.inertia[0][0] = -1.0;
        assert!(build_assembly(&[[0, 0]], 0.5, u).is_err());
    }

    #[test]
    fn inertia_single_and_pair() {
        let l = build_assembly(&[[0, 0]], 0.5, unit()).unwrap();
        let im = assembly_inertia(&l);
        assert_relative_eq!(im.inertia, unit().inertia_matrix());
        assert_relative_eq!(im.com, Vector2::zeros());

        let d = 0.5;
        let l = AssemblyLayout::grid(2, 1, d, unit()).unwrap();
        let im = assembly_inertia(&l);
        let jz = 2.0 * 0.018 + 2.0 * 1.0 * (d / 2.0) * (d / 2.0);
        assert_relative_eq!(im.inertia[(2, 2)], jz, epsilon = 1e-15);
        assert_relative_eq!(im.total_mass, 2.0);
    }

    #[test]
    fn inertia_grid_com_zero() {
        let l = AssemblyLayout::grid(3, 2, 0.5, unit()).unwrap();
        assert!(assembly_inertia(&l).com.norm() < 1e-15);
    }

    #[test]
    fn tau_pm_examples() {
        let l = AssemblyLayout::grid(2, 1, 0.5, unit()).unwrap();
        let t = tau_pm(&[10.0, 10.0], &l).unwrap();
        assert_relative_eq!(t.0[0], -2.5);
        assert_relative_eq!(t.0[1], 0.0);
        assert_relative_eq!(t.0[2], 2.5);
        assert_relative_eq!(t.0[3], 0.0);

        let l3 = AssemblyLayout::grid(3, 2, 0.5, unit()).unwrap();
        assert_eq!(tau_pm(&[0.0; 6], &l3).unwrap(), TauPM([0.0; 4]));

        let l1 = build_assembly(&[[0, 0]], 0.5, unit()).unwrap();
        assert_eq!(tau_pm(&[5.0], &l1).unwrap(), TauPM([0.0; 4]));

        assert!(matches!(
            tau_pm(&[1.0, -1.0], &l),
            Err(AssemblyError::NegativeThrust { index: 1, .. })
        ));
        assert!(tau_pm(&[1.0], &l).is_err());
    }

    #[test]
    fn efficiency_matrix_examples() {
        let l1 = build_assembly(&[[0, 0]], 0.5, unit()).unwrap();
        let e = efficiency_matrix(&l1, 0, 1e-6).unwrap();
        assert_eq!(e[(0, 0)], 1.0);

        let l6 = AssemblyLayout::grid(3, 2, 0.5, unit()).unwrap();
        for i in 0..6 {
            assert_relative_eq!(efficiency_matrix(&l6, i, 1e-6).unwrap()[(0, 0)], 1.0 / 6.0);
        }
        assert!(matches!(
            efficiency_matrix(&l6, 0, 0.0),
            Err(AssemblyError::InvalidMu(_))
        ));
        assert!(efficiency_matrix(&l6, 6, 1e-6).is_err());
    }

    #[test]
    fn efficiency_matrix_reconstructs_moment() {
        // A commanded moment pushed through the thrust-per-moment entries and
        // back through the lever arms must come out unchanged.
        for layout in [
            AssemblyLayout::grid(2, 1, 0.5, unit()).unwrap(),
            AssemblyLayout::grid(3, 2, 0.5, unit()).unwrap(),
            build_assembly(&[[0, 0], [0, 1], [1, 1], [2, 1]], 0.4, unit()).unwrap(),
        ] {
            // per channel: Σ e_roll·y = 1 and Σ e_pitch·(−x) = 1
            let (mut roll, mut pitch) = (0.0, 0.0);
            for i in 0..layout.n() {
                let e = efficiency_matrix(&layout, i, 1e-6).unwrap();
                let p = layout.position(i);
                roll += lever_moment(&p, e[(1, 1)]).x;
                pitch += lever_moment(&p, e[(2, 2)]).y;
            }
            let has_y = layout.positions().iter().any(|p| p.y != 0.0);
            assert_relative_eq!(roll, if has_y { 1.0 } else { 0.0 }, epsilon = 1e-12);
            assert_relative_eq!(pitch, 1.0, epsilon = 1e-12);
        }
        // symmetric layout: full moment round trip, no cross-coupling
        let layout = AssemblyLayout::grid(3, 2, 0.5, unit()).unwrap();
        let (mx, my) = (0.7, -1.3);
        let mut rebuilt = Vector3::zeros();
        for i in 0..layout.n() {
            let e = efficiency_matrix(&layout, i, 1e-6).unwrap();
            rebuilt += lever_moment(&layout.position(i), e[(1, 1)] * mx + e[(2, 2)] * my);
        }
        assert_relative_eq!(rebuilt.x, mx, epsilon = 1e-5);
        assert_relative_eq!(rebuilt.y, my, epsilon = 1e-5);
        // 2×1, unit at x = +0.25: pitch entry = −|0.25+μ| / Σ|x+μ||x|
        let l = AssemblyLayout::grid(2, 1, 0.5, unit()).unwrap();
        let mu = 1e-6;
        let e = efficiency_matrix(&l, 1, mu).unwrap();
        let denom = (0.25 + mu) * 0.25 + (-0.25f64 + mu).abs() * 0.25;
        assert_relative_eq!(e[(2, 2)], -(0.25 + mu) / denom, epsilon = 1e-15);
        assert_eq!(e[(1, 1)], 0.0);
    }
}
