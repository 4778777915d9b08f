//! Scenario files: one TOML document fully determines a run.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::assembly::{build_assembly, AssemblyLayout, Cell, UnitSpec};
use crate::fault::FaultState;
use crate::planner::PlannerConfig;
use crate::sim::{SimConfig, SimEvent, SpiralParams};
use crate::trajopt::{CostWeights, OptimizerConfig, Timing};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerMode {
    #[default]
    AttitudeAware,
    /// No attitude term in the search or the trajectory cost.
    KinematicOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnitBlock {
    pub mass: f64,
    pub arm: f64,
    pub f_max: f64,
    pub k_tau: f64,
    pub inertia_diag: [f64; 3],
    pub thrust_coeff: f64,
}

impl Default for UnitBlock {
    fn default() -> Self {
        let u = UnitSpec::default();
        let r = u.rotors[0];
        UnitBlock {
            mass: u.mass,
            arm: u.arm,
            f_max: r.f_max,
            k_tau: r.k_tau,
            inertia_diag: [u.inertia[0][0], u.inertia[1][1], u.inertia[2][2]],
            thrust_coeff: u.thrust_coeff,
        }
    }
}

impl UnitBlock {
    pub fn spec(&self) -> UnitSpec {
        UnitSpec::cross(self.mass, self.arm, self.f_max, self.k_tau, self.inertia_diag, self.thrust_coeff)
    }
}

/// Either a `cols × rows` rectangle or an explicit `[row, col]` cell list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cols: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<Vec<Cell>>,
    pub pitch: f64,
    /// Detached units available to reconfiguration events.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub spare_units: usize,
    #[serde(default)]
    pub unit: UnitBlock,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

impl LayoutSpec {
    pub fn build(&self) -> Result<AssemblyLayout, HarnessError> {
        let cells: Vec<Cell> = match (&self.cells, self.cols, self.rows) {
            (Some(c), None, None) => c.clone(),
            (None, Some(cols), Some(rows)) if cols > 0 && rows > 0 => {
                (0..rows).flat_map(|r| (0..cols).map(move |c| [r, c])).collect()
            }
            _ => {
                return Err(HarnessError::Config(
                    "layout: give either positive cols and rows, or cells".into(),
                ))
            }
        };
        build_assembly(&cells, self.pitch, self.unit.spec())
            .map_err(|e| HarnessError::Config(format!("layout: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotorFault {
    pub unit: usize,
    pub rotor: usize,
    pub eta: f64,
}

/// Faults present from the start of the run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultSpec {
    pub failed_units: Vec<usize>,
    pub rotors: Vec<RotorFault>,
}

impl FaultSpec {
    pub fn build(&self, n: usize) -> Result<FaultState, HarnessError> {
        let mut f = FaultState::healthy(n);
        for &u in &self.failed_units {
            f = f
                .mark_unit_failed(u)
                .map_err(|e| HarnessError::Config(format!("faults.failed_units: {e}")))?;
        }
        for (k, r) in self.rotors.iter().enumerate() {
            f = f
                .set_rotor_eta(r.unit, r.rotor, r.eta)
                .map_err(|e| HarnessError::Config(format!("faults.rotors[{k}]: {e}")))?;
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HoverSpec {
    pub position: [f64; 3],
    pub psi: f64,
}

impl Default for HoverSpec {
    fn default() -> Self {
        HoverSpec {
            position: [0.0, 0.0, 1.0],
            psi: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpiralSpec {
    pub radius: f64,
    pub pitch_rate: f64,
    pub angular_rate: f64,
    pub z0: f64,
    pub psi: f64,
    /// Start already moving at the reference velocity instead of at rest.
    pub start_moving: bool,
}

impl Default for SpiralSpec {
    fn default() -> Self {
        let p = SpiralParams::default();
        SpiralSpec {
            radius: p.radius,
            pitch_rate: p.pitch_rate,
            angular_rate: p.angular_rate,
            z0: p.z0,
            psi: p.psi,
            start_moving: true,
        }
    }
}

impl SpiralSpec {
    pub fn params(&self) -> SpiralParams {
        SpiralParams {
            radius: self.radius,
            pitch_rate: self.pitch_rate,
            angular_rate: self.angular_rate,
            z0: self.z0,
            psi: self.psi,
        }
    }
}

/// Plan on a map, optimize, then fly the result at constant altitude.
/// Poses are `[x, y, yaw]` in meters and radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannedSpec {
    /// Occupancy map, relative to the scenario file.
    pub map: PathBuf,
    pub start: [f64; 3],
    pub goal: [f64; 3],
    #[serde(default = "default_altitude")]
    pub altitude: f64,
    /// Weight of the attitude deviation in the search priority.
    #[serde(default = "default_l_phi")]
    pub l_phi: f64,
    /// Hover time appended after the trajectory ends, s.
    #[serde(default = "default_settle")]
    pub settle: f64,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub timing: Timing,
    #[serde(default)]
    pub weights: CostWeights,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

fn default_altitude() -> f64 {
    1.0
}
fn default_l_phi() -> f64 {
    5.0
}
fn default_settle() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceSpec {
    Hover(HoverSpec),
    Spiral(SpiralSpec),
    Planned(Box<PlannedSpec>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    /// Output root, relative to the working directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Sample spacing of the plot files, s.
    pub plot_dt: f64,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: None,
            plot_dt: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default = "default_trials")]
    pub trial_count: usize,
    /// Trial `i` draws its initial-position jitter from seed `seed + i`.
    #[serde(default)]
    pub seed: u64,
    /// Half-width of the uniform initial-position jitter, m; only used when
    /// more than one trial runs.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    #[serde(default)]
    pub planner_mode: PlannerMode,
    pub layout: LayoutSpec,
    #[serde(default)]
    pub faults: FaultSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<SimEvent>,
    pub reference: ReferenceSpec,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub output: OutputSpec,
    /// Directory relative paths resolve against; set by [`Scenario::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_trials() -> usize {
    1
}
fn default_jitter() -> f64 {
    0.02
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Reads, parses and validates a scenario file.
    pub fn load(path: &Path) -> Result<Scenario, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut s = Scenario::parse(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        s.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        s.validate()
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Ok(s)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let cfg = |m: String| Err(HarnessError::Config(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return cfg(format!("name must be a plain non-empty file stem, got {:?}", self.name));
        }
        if self.trial_count == 0 {
            return cfg("trial_count must be at least 1".into());
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return cfg(format!("jitter must be non-negative, got {}", self.jitter));
        }
        if !(self.output.plot_dt > 0.0) {
            return cfg(format!("output.plot_dt must be positive, got {}", self.output.plot_dt));
        }
        let layout = self.layout.build()?;
        self.faults.build(layout.n())?;
        self.sim
            .validate()
            .map_err(|e| HarnessError::Config(format!("sim: {e}")))?;
        match &self.reference {
            ReferenceSpec::Hover(h) => finite("reference.position", &h.position)?,
            ReferenceSpec::Spiral(s) => {
                if !(s.radius >= 0.0 && s.angular_rate.is_finite() && s.pitch_rate.is_finite()) {
                    return cfg("reference: spiral needs radius ≥ 0 and finite rates".into());
                }
            }
            ReferenceSpec::Planned(p) => {
                finite("reference.start", &p.start)?;
                finite("reference.goal", &p.goal)?;
                if !(p.l_phi >= 0.0) || !(p.settle >= 0.0) {
                    return cfg("reference: l_phi and settle must be non-negative".into());
                }
                p.planner
                    .validate()
                    .map_err(|e| HarnessError::Config(format!("reference.planner: {e}")))?;
                p.weights
                    .validate()
                    .map_err(|e| HarnessError::Config(format!("reference.weights: {e}")))?;
                let map = self.resolve(&p.map);
                if !map.is_file() {
                    return cfg(format!("reference.map: file {} not found", map.display()));
                }
            }
        }
        Ok(())
    }

    /// Builds layout and initial faults.
    pub fn assembly(&self) -> Result<(AssemblyLayout, FaultState), HarnessError> {
        let layout = self.layout.build()?;
        let faults = self.faults.build(layout.n())?;
        Ok((layout, faults))
    }
}

fn finite(name: &str, v: &[f64; 3]) -> Result<(), HarnessError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(HarnessError::Config(format!("{name} must be finite")))
    }
}

pub(crate) fn vec3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::from(a)
}
