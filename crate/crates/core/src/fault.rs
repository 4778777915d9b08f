//! Unit failures and rotor degradation.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{AssemblyLayout, ROTORS_PER_UNIT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FaultError {
    #[error("unit index {index} out of range for {n} units")]
    UnitOutOfRange { index: usize, n: usize },
    #[error("rotor index {0} out of range")]
    RotorOutOfRange(usize),
    #[error("eta must lie in [0, 1], got {0}")]
    EtaOutOfRange(f64),
    #[error("fault state covers {got} units, layout has {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("nominal thrust of unit {unit} rotor {rotor} is negative")]
    NegativeThrust { unit: usize, rotor: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitStatus {
    Healthy,
    Failed,
}

/// Per-unit status and per-rotor efficiency factors.
///
/// `eta = 1` is a nominal rotor; `eta = 0` is a dead one. A failed unit has
/// all of its factors at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultState {
    unit_status: Vec<UnitStatus>,
    eta: Vec<[f64; ROTORS_PER_UNIT]>,
}

impl FaultState {
    pub fn healthy(n: usize) -> Self {
        FaultState {
            unit_status: vec![UnitStatus::Healthy; n],
            eta: vec![[1.0; ROTORS_PER_UNIT]; n],
        }
    }

    pub fn n(&self) -> usize {
        self.eta.len()
    }

    pub fn status(&self, unit: usize) -> UnitStatus {
        self.unit_status[unit]
    }

    pub fn eta(&self, unit: usize) -> [f64; ROTORS_PER_UNIT] {
        self.eta[unit]
    }

    pub fn etas(&self) -> &[[f64; ROTORS_PER_UNIT]] {
        &self.eta
    }

    pub fn is_failed(&self, unit: usize) -> bool {
        self.unit_status[unit] == UnitStatus::Failed
    }

    /// Failed, or at least one rotor below nominal.
    pub fn is_faulty(&self, unit: usize) -> bool {
        self.is_failed(unit) || self.eta[unit].iter().any(|&e| e < 1.0)
    }

    pub fn any_fault(&self) -> bool {
        (0..self.n()).any(|i| self.is_faulty(i))
    }

    pub fn healthy_units(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| !self.is_faulty(i)).collect()
    }

    fn check_unit(&self, unit: usize) -> Result<(), FaultError> {
        if unit >= self.n() {
            Err(FaultError::UnitOutOfRange {
                index: unit,
                n: self.n(),
            })
        } else {
            Ok(())
        }
    }

    pub fn mark_unit_failed(&self, unit: usize) -> Result<FaultState, FaultError> {
        self.check_unit(unit)?;
        let mut next = self.clone();
        next.unit_status[unit] = UnitStatus::Failed;
        next.eta[unit] = [0.0; ROTORS_PER_UNIT];
        Ok(next)
    }

    pub fn set_rotor_eta(&self, unit: usize, rotor: usize, eta: f64) -> Result<FaultState, FaultError> {
        self.check_unit(unit)?;
        if rotor >= ROTORS_PER_UNIT {
            return Err(FaultError::RotorOutOfRange(rotor));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(FaultError::EtaOutOfRange(eta));
        }
        let mut next = self.clone();
        next.eta[unit][rotor] = eta;
        Ok(next)
    }

    /// Keeps only the listed units, in order.
    pub fn select(&self, units: &[usize]) -> Result<FaultState, FaultError> {
        for &u in units {
            self.check_unit(u)?;
        }
        Ok(FaultState {
            unit_status: units.iter().map(|&u| self.unit_status[u]).collect(),
            eta: units.iter().map(|&u| self.eta[u]).collect(),
        })
    }

    pub fn check_layout(&self, layout: &AssemblyLayout) -> Result<(), FaultError> {
        if self.n() != layout.n() {
            return Err(FaultError::LengthMismatch {
                expected: layout.n(),
                got: self.n(),
            });
        }
        Ok(())
    }

    /// Thrusts actually produced when `commanded` is sent to the rotors.
    pub fn apply(&self, commanded: &[[f64; ROTORS_PER_UNIT]]) -> Vec<[f64; ROTORS_PER_UNIT]> {
        commanded
            .iter()
            .zip(&self.eta)
            .map(|(c, e)| std::array::from_fn(|j| c[j] * e[j]))
            .collect()
    }
}

/// Thrust and moment lost to degradation, relative to the nominal command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WrenchLoss {
    pub d_force: f64,
    pub d_moment: Vector3<f64>,
}

/// Sums `(η − 1)·f` over every rotor, with moments taken at absolute rotor
/// positions and yaw reaction scaled the same way as thrust.
pub fn wrench_loss(
    layout: &AssemblyLayout,
    faults: &FaultState,
    nominal: &[[f64; ROTORS_PER_UNIT]],
) -> Result<WrenchLoss, FaultError> {
    faults.check_layout(layout)?;
    if nominal.len() != layout.n() {
        return Err(FaultError::LengthMismatch {
            expected: layout.n(),
            got: nominal.len(),
        });
    }
    let mut d_force = 0.0;
    let mut d_moment = Vector3::zeros();
    for (i, (row, eta)) in nominal.iter().zip(faults.etas()).enumerate() {
        for j in 0..ROTORS_PER_UNIT {
            if !(row[j] >= 0.0) {
                return Err(FaultError::NegativeThrust { unit: i, rotor: j });
            }
            let lost = (eta[j] - 1.0) * row[j];
            if lost != 0.0 {
                d_force += lost;
                d_moment += layout.rotor_moment(i, j, lost);
            }
        }
    }
    Ok(WrenchLoss { d_force, d_moment })
}
