//! Scenario execution: optional plan and optimize, then simulate, then
//! write artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::plot::emit_plot_data;
use super::scenario::{vec3, PlannedSpec, PlannerMode, ReferenceSpec, Scenario};
use super::HarnessError;
use crate::allocation::FtcMode;
use crate::planner::{astar_plan, AttitudeObjectiveSpec, DiscreteSequence, Environment, SE3Node};
use crate::sim::{run_closed_loop, Metrics, Reference, RigidState, SimSetup, Trace};
use crate::trajopt::{
    init_from_sequence, optimize, shortcut_sequence, simplify_sequence, AttitudeTarget, OptimizeResult,
    PiecewiseTrajectory,
};

/// Version of the trace CSV and metrics JSON layouts.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the scenario's output root.
    pub out_dir: Option<PathBuf>,
    /// Overrides the plant step.
    pub dt: Option<f64>,
    /// Write artifacts to disk.
    pub write: bool,
}

#[derive(Debug, Clone)]
pub struct PlanOutput {
    pub env: Environment,
    pub sequence: DiscreteSequence,
    pub nodes: Vec<SE3Node>,
    pub initial: PiecewiseTrajectory,
    pub result: OptimizeResult,
    pub target: AttitudeTarget,
}

/// Runs the planner and trajectory optimizer of a planned-reference scenario.
pub fn plan_scenario(s: &Scenario, p: &PlannedSpec) -> Result<PlanOutput, HarnessError> {
    let (layout, faults) = s.assembly()?;
    let map = s.resolve(&p.map);
    let env = Environment::load(&map)
        .map_err(|e| HarnessError::Config(format!("reference.map {}: {e}", map.display())))?;
    let aware = s.planner_mode == PlannerMode::AttitudeAware;
    let spec = AttitudeObjectiveSpec::for_layout(&layout, if aware { p.l_phi } else { 0.0 });
    let mut weights = p.weights.clone();
    if !aware {
        weights.lambda_phi = 0.0;
    }
    let start = SE3Node::new(p.start[0], p.start[1], 0.0, p.start[2]);
    let goal = SE3Node::new(p.goal[0], p.goal[1], 0.0, p.goal[2]);
    let sequence = astar_plan(&env, &start, &goal, &layout, &faults, &spec, &p.planner)?;
    let nodes = shortcut_sequence(&simplify_sequence(&sequence), &env, &layout, p.planner.margin);
    let initial = init_from_sequence(&nodes, &p.timing)?;
    let target = AttitudeTarget::for_assembly(&layout, &faults, &spec)?;
    let result = optimize(&initial, &env, &layout, &weights, &target, &p.optimizer)?;
    Ok(PlanOutput {
        env,
        sequence,
        nodes,
        initial,
        result,
        target,
    })
}

#[derive(Debug, Clone)]
pub struct Prepared {
    /// Setup of an unperturbed run.
    pub setup: SimSetup,
    pub plan: Option<PlanOutput>,
}

pub fn prepare(s: &Scenario, dt: Option<f64>) -> Result<Prepared, HarnessError> {
    let (layout, faults) = s.assembly()?;
    let mut config = s.sim.clone();
    if let Some(dt) = dt {
        config.dt = dt;
    }
    let (reference, initial, env, plan) = match &s.reference {
        ReferenceSpec::Hover(h) => {
            let p = vec3(h.position);
            let r = Reference::Hover { p, psi: h.psi };
            (r, RigidState::at_rest(p, h.psi), None, None)
        }
        ReferenceSpec::Spiral(sp) => {
            let r = Reference::Spiral(sp.params());
            let r0 = r.at(0.0);
            let mut x0 = RigidState::at_rest(r0.p, r0.psi);
            if sp.start_moving {
                x0.v = r0.v;
            }
            (r, x0, None, None)
        }
        ReferenceSpec::Planned(p) => {
            let plan = plan_scenario(s, p)?;
            let traj = plan.result.trajectory.clone();
            config.duration = traj.total_time() + p.settle;
            let r = Reference::Trajectory {
                traj,
                z: p.altitude,
            };
            let r0 = r.at(0.0);
            let env = plan.env.clone();
            (r, RigidState::at_rest(r0.p, r0.psi), Some(env), Some(plan))
        }
    };
    config
        .validate()
        .map_err(|e| HarnessError::Config(format!("sim: {e}")))?;
    Ok(Prepared {
        setup: SimSetup {
            layout,
            faults,
            events: s.events.clone(),
            reference,
            spare_units: s.layout.spare_units,
            initial,
            env,
            config,
        },
        plan,
    })
}

/// Setup of trial `i`: with more than one trial the initial position gets a
/// seeded uniform jitter.
pub fn trial_setup(s: &Scenario, base: &SimSetup, i: usize) -> SimSetup {
    let mut setup = base.clone();
    if s.trial_count > 1 && s.jitter > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed.wrapping_add(i as u64));
        for k in 0..3 {
            setup.initial.p[k] += rng.gen_range(-s.jitter..=s.jitter);
        }
    }
    setup
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub name: String,
    pub planner_mode: PlannerMode,
    pub ftc_mode: FtcMode,
    pub trials: Vec<Metrics>,
    pub mean_rms: f64,
    pub std_rms: f64,
    pub mean_max_error: f64,
    pub worst_max_error: f64,
    pub collisions: usize,
    pub diverged: bool,
}

impl RunSummary {
    fn new(s: &Scenario, ftc_mode: FtcMode, trials: Vec<Metrics>) -> Self {
        let n = trials.len() as f64;
        let mean_rms = trials.iter().map(|m| m.rms_error).sum::<f64>() / n;
        let var = trials.iter().map(|m| (m.rms_error - mean_rms).powi(2)).sum::<f64>() / n;
        RunSummary {
            schema_version: SCHEMA_VERSION,
            name: s.name.clone(),
            planner_mode: s.planner_mode,
            ftc_mode,
            mean_rms,
            std_rms: var.sqrt(),
            mean_max_error: trials.iter().map(|m| m.max_error).sum::<f64>() / n,
            worst_max_error: trials.iter().map(|m| m.max_error).fold(0.0, f64::max),
            collisions: trials.iter().map(|m| m.collision_count).sum(),
            diverged: trials.iter().any(|m| m.diverged),
            trials,
        }
    }

    /// Process exit status for this outcome.
    pub fn exit_code(&self) -> i32 {
        if self.diverged {
            2
        } else {
            0
        }
    }
}

pub struct Execution {
    pub summary: RunSummary,
    pub traces: Vec<Trace>,
    pub prepared: Prepared,
}

/// Runs every trial of a scenario; trials run in parallel.
pub fn execute(s: &Scenario, dt: Option<f64>) -> Result<Execution, HarnessError> {
    let prepared = prepare(s, dt)?;
    let runs: Vec<(Trace, Metrics)> = (0..s.trial_count)
        .into_par_iter()
        .map(|i| run_closed_loop(&trial_setup(s, &prepared.setup, i)))
        .collect::<Result<_, _>>()?;
    let (traces, metrics): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    let summary = RunSummary::new(s, prepared.setup.config.ftc_mode, metrics);
    Ok(Execution {
        summary,
        traces,
        prepared,
    })
}

pub fn output_dir(s: &Scenario, opts: &RunOptions) -> PathBuf {
    let root = opts
        .out_dir
        .clone()
        .or_else(|| s.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    root.join(&s.name)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).expect("plain data serializes");
    fs::write(path, text + "\n").map_err(io_err(path))
}

#[derive(Serialize)]
struct TrialMetrics<'a> {
    schema_version: u32,
    scenario: &'a str,
    trial: usize,
    metrics: &'a Metrics,
}

/// Writes traces, per-trial metrics, the summary, plot data and (for planned
/// references) the discrete sequence and trajectory samples.
pub fn write_artifacts(s: &Scenario, ex: &Execution, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (i, (trace, m)) in ex.traces.iter().zip(&ex.summary.trials).enumerate() {
        let path = dir.join(format!("trace_{i}.csv"));
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        trace.write_csv(std::io::BufWriter::new(file))?;
        let tm = TrialMetrics {
            schema_version: SCHEMA_VERSION,
            scenario: &s.name,
            trial: i,
            metrics: m,
        };
        write_json(&dir.join(format!("metrics_{i}.json")), &tm)?;
    }
    write_json(&dir.join("summary.json"), &ex.summary)?;
    if let Some(trace) = ex.traces.first() {
        emit_plot_data(trace, s.output.plot_dt, &dir.join("plot"))?;
    }
    if let Some(plan) = &ex.prepared.plan {
        write_plan(plan, s.output.plot_dt, dir)?;
    }
    Ok(())
}

pub fn write_plan(plan: &PlanOutput, dt: f64, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("sequence.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record(["x", "y", "yaw"]).map_err(|e| csv_err(&path, e))?;
    for n in &plan.sequence.nodes {
        let rec = [n.position.x, n.position.y, n.yaw()].map(|v| format!("{v:.6}"));
        w.write_record(&rec).map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(io_err(&path))?;
    let path = dir.join("trajectory.csv");
    fs::write(&path, plan.result.trajectory.to_csv(dt)).map_err(io_err(&path))?;
    write_json(&dir.join("plan.json"), &PlanReport::new(plan))
}

fn csv_err(path: &Path, e: csv::Error) -> HarnessError {
    HarnessError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanReport {
    pub nodes: usize,
    pub segments: usize,
    pub path_cost: f64,
    pub attitude_cost: f64,
    pub expansions: usize,
    pub phi_star: f64,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub duration: f64,
    pub iterations: usize,
    pub converged: bool,
    pub g_o: f64,
    pub g_phi: f64,
}

impl PlanReport {
    pub fn new(p: &PlanOutput) -> Self {
        let b = &p.result.breakdown;
        PlanReport {
            nodes: p.sequence.nodes.len(),
            segments: p.result.trajectory.segments(),
            path_cost: p.sequence.path_cost,
            attitude_cost: p.sequence.attitude_cost,
            expansions: p.sequence.expansions,
            phi_star: p.target.psi,
            initial_cost: p.result.history.first().copied().unwrap_or(b.total),
            final_cost: b.total,
            duration: p.result.trajectory.total_time(),
            iterations: p.result.iterations,
            converged: p.result.converged,
            g_o: b.g_o,
            g_phi: b.g_phi,
        }
    }
}

/// Loads, runs and (optionally) writes one scenario.
pub fn run_scenario(path: &Path, opts: &RunOptions) -> Result<RunSummary, HarnessError> {
    let s = Scenario::load(path)?;
    let ex = execute(&s, opts.dt)?;
    if opts.write {
        write_artifacts(&s, &ex, &output_dir(&s, opts))?;
    }
    Ok(ex.summary)
}
