//! Fixed-step closed loop with timed fault and reconfiguration events.

use std::io::Write;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::control::{tracking_controller, ControllerGains};
use super::plant::{applied_wrench, integrate, PlantModel, RigidState};
use super::reference::Reference;
use super::SimError;
use crate::allocation::{allocate, FtcMode};
use crate::assembly::{build_assembly, AssemblyLayout, Cell};
use crate::fault::FaultState;
use crate::planner::{footprint_collision_check, wrap_angle, Environment, SE3Node};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Plant integration step, s.
    pub dt: f64,
    /// Controller/allocator period (zero-order hold), s.
    pub control_dt: f64,
    pub duration: f64,
    pub ftc_mode: FtcMode,
    /// Delay between a fault hitting the plant and the allocator knowing it, s.
    pub fault_latency: f64,
    pub gains: ControllerGains,
    /// Tracking error that counts as divergence, m.
    pub divergence_error: f64,
    /// Tilt that counts as divergence, degrees.
    pub divergence_tilt_deg: f64,
    /// Half-width of the window around reconfiguration events, s.
    pub transient_window: f64,
    /// Clearance below which an audited footprint counts as a collision, m.
    pub collision_margin: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-3,
            control_dt: 1e-2,
            duration: 20.0,
            ftc_mode: FtcMode::Full,
            fault_latency: 0.0,
            gains: ControllerGains::default(),
            divergence_error: 5.0,
            divergence_tilt_deg: 80.0,
            transient_window: 1.0,
            collision_margin: 0.0,
        }
    }
}

impl SimConfig {
    /// Plant steps per control tick.
    fn substeps(&self) -> Result<usize, SimError> {
        if !(self.dt > 0.0 && self.dt <= 0.01) {
            return Err(SimError::Config(format!("dt must lie in (0, 0.01], got {}", self.dt)));
        }
        let k = (self.control_dt / self.dt).round();
        if k < 1.0 || (k * self.dt - self.control_dt).abs() > 1e-9 {
            return Err(SimError::Config(format!(
                "control_dt {} must be a whole multiple of dt {}",
                self.control_dt, self.dt
            )));
        }
        Ok(k as usize)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.substeps()?;
        self.gains.validate().map_err(SimError::Config)?;
        let positive = [
            ("duration", self.duration),
            ("divergence_error", self.divergence_error),
            ("divergence_tilt_deg", self.divergence_tilt_deg),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("fault_latency", self.fault_latency),
            ("transient_window", self.transient_window),
            ("collision_margin", self.collision_margin),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SimError::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Timed change during a run. Units are named by their index in the
/// initial layout, which stays their id through reconfigurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SimEvent {
    UnitFailure { time: f64, unit: usize },
    RotorDegradation { time: f64, unit: usize, rotor: usize, eta: f64 },
    /// New arrangement: `units[k]` moves to `cells[k]`. Units left out are
    /// detached from the assembly; cells share one grid frame across events.
    Reconfigure { time: f64, units: Vec<usize>, cells: Vec<Cell> },
}

impl SimEvent {
    pub fn time(&self) -> f64 {
        match self {
            SimEvent::UnitFailure { time, .. }
            | SimEvent::RotorDegradation { time, .. }
            | SimEvent::Reconfigure { time, .. } => *time,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimSetup {
    pub layout: AssemblyLayout,
    pub faults: FaultState,
    pub events: Vec<SimEvent>,
    pub reference: Reference,
    /// Healthy units that start detached and may join at a reconfiguration;
    /// their ids follow the initial layout's.
    pub spare_units: usize,
    pub initial: RigidState,
    /// Map for the footprint collision audit.
    pub env: Option<Environment>,
    pub config: SimConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: f64,
    pub p: [f64; 3],
    pub v: [f64; 3],
    /// Roll, pitch, yaw in radians.
    pub euler: [f64; 3],
    pub w: [f64; 3],
    pub p_ref: [f64; 3],
    pub psi_ref: f64,
    pub force: f64,
    pub moment: [f64; 3],
    /// World-frame acceleration produced by the applied wrench.
    pub accel: [f64; 3],
    pub unit_thrust: Vec<f64>,
    pub saturated: bool,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRecord {
    pub time: f64,
    pub kind: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub events: Vec<EventRecord>,
}

pub const TRACE_COLUMNS: [&str; 27] = [
    "t", "x", "y", "z", "vx", "vy", "vz", "roll", "pitch", "yaw", "wx", "wy", "wz", "x_ref",
    "y_ref", "z_ref", "psi_ref", "force", "mx", "my", "mz", "ax", "ay", "az", "saturated",
    "error", "unit_thrust",
];

impl Trace {
    /// One row per control tick; `unit_thrust` is `;`-separated because the
    /// unit count can change at reconfiguration events.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRACE_COLUMNS).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec: Vec<String> = std::iter::once(r.t)
                .chain(r.p)
                .chain(r.v)
                .chain(r.euler)
                .chain(r.w)
                .chain(r.p_ref)
                .chain([r.psi_ref, r.force])
                .chain(r.moment)
                .chain(r.accel)
                .map(|x| format!("{x:.9}"))
                .collect();
            rec.push(u8::from(r.saturated).to_string());
            rec.push(format!("{:.9}", r.error));
            let thrusts: Vec<String> = r.unit_thrust.iter().map(|u| format!("{u:.6}")).collect();
            rec.push(thrusts.join(";"));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> SimError {
    SimError::Io(std::io::Error::other(e))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rms_error: f64,
    pub max_error: f64,
    /// Degrees.
    pub yaw_transient: f64,
    /// m/s².
    pub accel_transient: f64,
    pub collision_count: usize,
    pub diverged: bool,
    pub diverged_at: Option<f64>,
    /// Time of the last recorded tick.
    pub final_time: f64,
    pub ticks: usize,
}

/// Tracks which unit ids are attached and where.
struct Assembly {
    layout: AssemblyLayout,
    ids: Vec<usize>,
}

impl Assembly {
    fn faults(&self, by_id: &FaultState) -> Result<FaultState, SimError> {
        Ok(by_id.select(&self.ids)?)
    }

    /// Rebuilds the layout and returns the body-frame shift of the mass center.
    fn reconfigure(&mut self, units: &[usize], cells: &[Cell]) -> Result<Vector2<f64>, SimError> {
        let old_centroid = self.layout.cell_centroid();
        let layout = build_assembly(cells, self.layout.pitch(), self.layout.unit().clone())?;
        let ids = layout
            .cells()
            .iter()
            .map(|c| units[cells.iter().position(|x| x == c).expect("cell from input")])
            .collect();
        let shift = (layout.cell_centroid() - old_centroid) * layout.pitch();
        self.layout = layout;
        self.ids = ids;
        Ok(shift)
    }
}

fn validate_events(events: &[SimEvent], n_ids: usize, duration: f64) -> Result<(), SimError> {
    let check_id = |u: usize| {
        if u >= n_ids {
            Err(SimError::Config(format!("event names unit {u}, only {n_ids} units exist")))
        } else {
            Ok(())
        }
    };
    for e in events {
        let t = e.time();
        if !(0.0..=duration).contains(&t) {
            return Err(SimError::Config(format!("event time {t} outside [0, {duration}]")));
        }
        match e {
            SimEvent::UnitFailure { unit, .. } => check_id(*unit)?,
            SimEvent::RotorDegradation { unit, rotor, eta, .. } => {
                check_id(*unit)?;
                FaultState::healthy(1).set_rotor_eta(0, *rotor, *eta)?;
            }
            SimEvent::Reconfigure { units, cells, .. } => {
                if units.len() != cells.len() || units.is_empty() {
                    return Err(SimError::Config(
                        "reconfigure needs one cell per listed unit".into(),
                    ));
                }
                for (k, &u) in units.iter().enumerate() {
                    check_id(u)?;
                    if units[..k].contains(&u) {
                        return Err(SimError::Config(format!("unit {u} listed twice")));
                    }
                }
            }
        }
    }
    Ok(())
}

fn with_spares(faults: &FaultState, spares: usize) -> Result<FaultState, SimError> {
    let mut all = FaultState::healthy(faults.n() + spares);
    for i in 0..faults.n() {
        if faults.is_failed(i) {
            all = all.mark_unit_failed(i)?;
        } else {
            for (j, &eta) in faults.eta(i).iter().enumerate() {
                all = all.set_rotor_eta(i, j, eta)?;
            }
        }
    }
    Ok(all)
}

fn apply_fault(by_id: &FaultState, e: &SimEvent) -> Result<FaultState, SimError> {
    Ok(match e {
        SimEvent::UnitFailure { unit, .. } => by_id.mark_unit_failed(*unit)?,
        SimEvent::RotorDegradation { unit, rotor, eta, .. } => {
            by_id.set_rotor_eta(*unit, *rotor, *eta)?
        }
        SimEvent::Reconfigure { .. } => by_id.clone(),
    })
}

fn describe(e: &SimEvent) -> (String, String) {
    match e {
        SimEvent::UnitFailure { unit, .. } => ("unit_failure".into(), format!("unit {unit}")),
        SimEvent::RotorDegradation { unit, rotor, eta, .. } => (
            "rotor_degradation".into(),
            format!("unit {unit} rotor {rotor} eta {eta}"),
        ),
        SimEvent::Reconfigure { units, cells, .. } => {
            let parts: Vec<String> = units
                .iter()
                .zip(cells)
                .map(|(u, c)| format!("{u}@({},{})", c[0], c[1]))
                .collect();
            ("reconfigure".into(), parts.join(" "))
        }
    }
}

/// Runs reference → controller → allocation → plant at the control rate,
/// integrating the plant at `dt` with rotor commands held between ticks.
///
/// Faults reach the plant at their event time and the allocator
/// `fault_latency` later. A reconfiguration switches the layout, mass model
/// and allocation at once; the state is re-expressed about the new mass
/// center. The run stops early when the state diverges.
pub fn run_closed_loop(setup: &SimSetup) -> Result<(Trace, Metrics), SimError> {
    let cfg = &setup.config;
    cfg.validate()?;
    let substeps = cfg.substeps()?;
    setup.faults.check_layout(&setup.layout)?;
    let n_ids = setup.layout.n() + setup.spare_units;
    validate_events(&setup.events, n_ids, cfg.duration)?;
    if !setup.initial.is_finite() {
        return Err(SimError::Config("initial state is not finite".into()));
    }

    let mut events: Vec<&SimEvent> = setup.events.iter().collect();
    events.sort_by(|a, b| a.time().total_cmp(&b.time()));
    let mut known_pending: Vec<&SimEvent> = events
        .iter()
        .copied()
        .filter(|e| !matches!(e, SimEvent::Reconfigure { .. }))
        .collect();
    known_pending.sort_by(|a, b| a.time().total_cmp(&b.time()));

    let mut asm = Assembly {
        layout: setup.layout.clone(),
        ids: (0..setup.layout.n()).collect(),
    };
    let mut true_faults = with_spares(&setup.faults, setup.spare_units)?;
    let mut known_faults = true_faults.clone();
    let mut model = PlantModel::for_layout(&asm.layout);
    let mut state = setup.initial;
    let g = cfg.gains.g;
    let tilt_limit = cfg.divergence_tilt_deg.to_radians();

    let mut trace = Trace::default();
    let mut reconfig_times = Vec::new();
    let mut metrics = Metrics::default();
    let mut next_event = 0;
    let mut next_known = 0;
    let n_ticks = (cfg.duration / cfg.control_dt + 1e-9).floor() as usize;
    let eps = 1e-9 * cfg.control_dt;

    for k in 0..=n_ticks {
        let t = k as f64 * cfg.control_dt;
        while next_event < events.len() && events[next_event].time() <= t + eps {
            let e = events[next_event];
            next_event += 1;
            if let SimEvent::Reconfigure { units, cells, .. } = e {
                let shift = asm.reconfigure(units, cells)?;
                let r = state.q * Vector3::new(shift.x, shift.y, 0.0);
                state.p += r;
                state.v += state.q * state.w.cross(&Vector3::new(shift.x, shift.y, 0.0));
                model = PlantModel::for_layout(&asm.layout);
                reconfig_times.push(t);
            } else {
                true_faults = apply_fault(&true_faults, e)?;
            }
            let (kind, detail) = describe(e);
            trace.events.push(EventRecord { time: t, kind, detail });
        }
        while next_known < known_pending.len()
            && known_pending[next_known].time() + cfg.fault_latency <= t + eps
        {
            known_faults = apply_fault(&known_faults, known_pending[next_known])?;
            next_known += 1;
        }

        let reference = setup.reference.at(t);
        let error = (state.p - reference.p).norm();
        if !state.is_finite() || !(error <= cfg.divergence_error) || state.tilt() > tilt_limit {
            metrics.diverged = true;
            metrics.diverged_at = Some(t);
            trace.events.push(EventRecord {
                time: t,
                kind: "divergence".into(),
                detail: format!("error {error:.3} m, tilt {:.1} deg", state.tilt().to_degrees()),
            });
            break;
        }

        let plant_faults = asm.faults(&true_faults)?;
        let alloc_faults = asm.faults(&known_faults)?;
        let ctrl = tracking_controller(&state, &reference, &cfg.gains, &model);
        let alloc = allocate(cfg.ftc_mode, &asm.layout, &alloc_faults, &ctrl.command)
            .map_err(|source| SimError::Allocation { time: t, source })?;
        let (force, moment) = applied_wrench(&asm.layout, &plant_faults, &alloc.rotor_thrust);
        let accel = state.q * Vector3::new(0.0, 0.0, force / model.mass) - Vector3::new(0.0, 0.0, g);

        if let Some(env) = &setup.env {
            let (_, _, yaw) = state.euler();
            let node = SE3Node::new(state.p.x, state.p.y, state.p.z, yaw);
            if !footprint_collision_check(&node, &asm.layout, env, cfg.collision_margin) {
                metrics.collision_count += 1;
            }
        }

        let (roll, pitch, yaw) = state.euler();
        trace.rows.push(TraceRow {
            t,
            p: state.p.into(),
            v: state.v.into(),
            euler: [roll, pitch, yaw],
            w: state.w.into(),
            p_ref: reference.p.into(),
            psi_ref: reference.psi,
            force: ctrl.command.force,
            moment: ctrl.command.moment.into(),
            accel: accel.into(),
            unit_thrust: alloc.unit_thrust.clone(),
            saturated: alloc.saturated,
            error,
        });

        if k == n_ticks {
            break;
        }
        for _ in 0..substeps {
            state = integrate(&state, force, &moment, &model, g, cfg.dt);
        }
    }

    summarize(&trace, &reconfig_times, cfg.transient_window, &mut metrics);
    Ok((trace, metrics))
}

fn summarize(trace: &Trace, reconfig_times: &[f64], window: f64, m: &mut Metrics) {
    let rows = &trace.rows;
    m.ticks = rows.len();
    if rows.is_empty() {
        return;
    }
    m.final_time = rows[rows.len() - 1].t;
    let sq: f64 = rows.iter().map(|r| r.error * r.error).sum();
    m.rms_error = (sq / rows.len() as f64).sqrt();
    m.max_error = rows.iter().map(|r| r.error).fold(0.0, f64::max);

    for &te in reconfig_times {
        let Some(at) = rows.iter().position(|r| r.t >= te - 1e-12) else {
            continue;
        };
        let psi_e = rows[at].euler[2];
        let before = if at > 0 { at - 1 } else { at };
        let a_e = Vector3::from(rows[before].accel);
        for r in rows.iter().filter(|r| (r.t - te).abs() <= window + 1e-12) {
            let dpsi = wrap_angle(r.euler[2] - psi_e).abs().to_degrees();
            m.yaw_transient = m.yaw_transient.max(dpsi);
            let da = (Vector3::from(r.accel) - a_e).norm();
            m.accel_transient = m.accel_transient.max(da);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::UnitSpec;
    use crate::sim::reference::{spiral_reference, SpiralParams};

    fn grid(cols: i32, rows: i32) -> AssemblyLayout {
        AssemblyLayout::grid(cols, rows, 0.3, UnitSpec::default()).unwrap()
    }

    fn hover_setup(layout: AssemblyLayout, duration: f64) -> SimSetup {
        let n = layout.n();
        let p = Vector3::new(0.0, 0.0, 1.0);
        SimSetup {
            layout,
            faults: FaultState::healthy(n),
            events: vec![],
            reference: Reference::Hover { p, psi: 0.0 },
            spare_units: 0,
            initial: RigidState::at_rest(p, 0.0),
            env: None,
            config: SimConfig {
                duration,
                ..SimConfig::default()
            },
        }
    }

    fn spiral_setup(mode: FtcMode, events: Vec<SimEvent>, latency: f64, duration: f64) -> SimSetup {
        let params = SpiralParams::default();
        let r = spiral_reference(0.0, &params);
        let mut initial = RigidState::at_rest(r.p, r.psi);
        initial.v = r.v;
        SimSetup {
            reference: Reference::Spiral(params),
            initial,
            events,
            config: SimConfig {
                duration,
                ftc_mode: mode,
                fault_latency: latency,
                ..SimConfig::default()
            },
            ..hover_setup(grid(3, 2), duration)
        }
    }

    #[test]
    fn hover_is_a_fixed_point() {
        let (trace, m) = run_closed_loop(&hover_setup(grid(2, 2), 3.0)).unwrap();
        assert_eq!(m.ticks, 301);
        assert!(!m.diverged);
        assert!(m.max_error < 1e-9, "{}", m.max_error);
        for r in &trace.rows {
            assert!(Vector3::from(r.accel).norm() < 1e-9);
            assert!(!r.saturated);
        }
    }

    #[test]
    fn runs_are_bit_identical() {
        let s = spiral_setup(FtcMode::Full, vec![], 0.0, 3.0);
        let a = run_closed_loop(&s).unwrap();
        let b = run_closed_loop(&s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn healthy_spiral_tracks_closely() {
        let (_, m) = run_closed_loop(&spiral_setup(FtcMode::Full, vec![], 0.0, 10.0)).unwrap();
        assert!(!m.diverged);
        assert!(m.rms_error < 0.05, "{}", m.rms_error);
    }

    #[test]
    fn exact_ftc_without_latency_matches_healthy() {
        let fault = SimEvent::RotorDegradation { time: 1.0, unit: 1, rotor: 1, eta: 0.5 };
        let (_, healthy) = run_closed_loop(&spiral_setup(FtcMode::Full, vec![], 0.0, 5.0)).unwrap();
        let (_, full) = run_closed_loop(&spiral_setup(FtcMode::Full, vec![fault.clone()], 0.0, 5.0)).unwrap();
        let (_, late) = run_closed_loop(&spiral_setup(FtcMode::Full, vec![fault.clone()], 0.1, 5.0)).unwrap();
        let (_, none) = run_closed_loop(&spiral_setup(FtcMode::None, vec![fault], 0.0, 5.0)).unwrap();
        assert!((full.rms_error - healthy.rms_error).abs() < 1e-6);
        assert!(late.rms_error.is_finite() && !late.diverged);
        assert!(none.rms_error > 1.5 * full.rms_error, "{} {}", none.rms_error, full.rms_error);
    }

    #[test]
    fn unit_failure_diverges_without_ftc() {
        let fail = vec![SimEvent::UnitFailure { time: 1.0, unit: 0 }];
        let (trace, none) = run_closed_loop(&spiral_setup(FtcMode::None, fail.clone(), 0.1, 8.0)).unwrap();
        assert!(none.diverged);
        assert!(trace.events.iter().any(|e| e.kind == "divergence"));
        let (_, full) = run_closed_loop(&spiral_setup(FtcMode::Full, fail, 0.1, 8.0)).unwrap();
        assert!(!full.diverged);
        assert!(full.max_error < 0.5, "{}", full.max_error);
    }

    #[test]
    fn identity_reconfiguration_is_seamless() {
        let layout = grid(3, 1);
        let cells = layout.cells().to_vec();
        let mut s = hover_setup(layout, 4.0);
        s.events = vec![SimEvent::Reconfigure { time: 2.0, units: vec![0, 1, 2], cells }];
        let (trace, m) = run_closed_loop(&s).unwrap();
        assert_eq!(trace.events.len(), 1);
        assert!(m.yaw_transient < 0.1);
        assert!(m.accel_transient < 1e-9);
        assert!(m.max_error < 1e-9);
    }

    #[test]
    fn docking_keeps_the_mass_center_in_place() {
        // a single unit docks a second one beside it; the combined mass center
        // moves by half a pitch in the body frame
        let mut s = hover_setup(grid(1, 1), 2.0);
        s.spare_units = 1;
        s.events = vec![SimEvent::Reconfigure {
            time: 1.0,
            units: vec![0, 1],
            cells: vec![[0, 0], [0, 1]],
        }];
        let (trace, m) = run_closed_loop(&s).unwrap();
        assert!(!m.diverged);
        let at = trace.rows.iter().position(|r| r.t >= 1.0 - 1e-9).unwrap();
        let jump = trace.rows[at].p[0] - trace.rows[at - 1].p[0];
        assert!((jump - 0.15).abs() < 1e-6, "{jump}");
        assert_eq!(trace.rows[at].unit_thrust.len(), 2);
    }

    #[test]
    fn bad_events_are_config_errors() {
        let mut s = hover_setup(grid(2, 1), 2.0);
        s.events = vec![SimEvent::UnitFailure { time: 1.0, unit: 5 }];
        assert!(matches!(run_closed_loop(&s), Err(SimError::Config(_))));
        s.events = vec![SimEvent::UnitFailure { time: 3.0, unit: 0 }];
        assert!(matches!(run_closed_loop(&s), Err(SimError::Config(_))));
        s.events = vec![];
        s.config.dt = 0.003;
        assert!(matches!(run_closed_loop(&s), Err(SimError::Config(_))));
    }

    #[test]
    fn csv_has_one_line_per_tick() {
        let (trace, _) = run_closed_loop(&hover_setup(grid(1, 1), 1.0)).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), TRACE_COLUMNS.join(","));
        assert_eq!(lines.count(), trace.rows.len());
    }
}
