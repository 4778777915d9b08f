//! A* over a position × yaw lattice with an attitude-deviation node cost.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::{PI, TAU};

use nalgebra::{Rotation2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::attitude::{
    optimal_attitude, wrap_angle, wrapped_yaw_distance, yaw_symmetry_period, AttitudeObjectiveSpec,
};
use super::{Environment, PlannerError};
use crate::assembly::AssemblyLayout;
use crate::fault::FaultState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SE3Node {
    pub position: Vector3<f64>,
    /// Roll, pitch, yaw in radians.
    pub attitude: Vector3<f64>,
    /// Index of the predecessor within the owning sequence.
    pub parent: Option<usize>,
    pub g: f64,
    pub f: f64,
}

impl SE3Node {
    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        SE3Node {
            position: Vector3::new(x, y, z),
            attitude: Vector3::new(0.0, 0.0, wrap_angle(yaw)),
            parent: None,
            g: 0.0,
            f: 0.0,
        }
    }

    pub fn xy(&self) -> Vector2<f64> {
        self.position.xy()
    }

    pub fn yaw(&self) -> f64 {
        self.attitude.z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteSequence {
    pub nodes: Vec<SE3Node>,
    /// Accumulated step cost from start to goal.
    pub path_cost: f64,
    /// Sum of the attitude-deviation cost over the nodes.
    pub attitude_cost: f64,
    pub expansions: usize,
    /// Yaw the deviation cost was measured against.
    pub phi_star: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Yaw lattice step, radians; must divide a full turn.
    pub yaw_step: f64,
    /// When false the search runs in position only and keeps the start yaw.
    pub yaw_enabled: bool,
    /// Path cost per radian of yaw change, meters per radian.
    pub yaw_cost: f64,
    /// Required clearance between footprint and obstacles, meters.
    pub margin: f64,
    pub max_expansions: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            yaw_step: 15f64.to_radians(),
            yaw_enabled: true,
            yaw_cost: 0.3,
            margin: 0.05,
            max_expansions: 2_000_000,
        }
    }
}

impl PlannerConfig {
    fn yaw_bins(&self) -> Result<usize, PlannerError> {
        if !self.yaw_enabled {
            return Ok(1);
        }
        if !(self.yaw_step > 0.0) {
            return Err(PlannerError::Config("yaw_step must be positive".into()));
        }
        let n = (TAU / self.yaw_step).round();
        if n < 1.0 || (n * self.yaw_step - TAU).abs() > 1e-9 {
            return Err(PlannerError::Config(format!(
                "yaw_step {:.4} rad does not divide a full turn",
                self.yaw_step
            )));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        self.yaw_bins()?;
        if !(self.yaw_cost >= 0.0) || !(self.margin >= 0.0) {
            return Err(PlannerError::Config("yaw_cost and margin must be non-negative".into()));
        }
        Ok(())
    }
}

/// Points filling every unit square of the assembly placed at `center` with
/// yaw `psi`, spaced at most `spacing` apart (edges included).
pub fn footprint_points(
    center: &Vector2<f64>,
    psi: f64,
    layout: &AssemblyLayout,
    spacing: f64,
) -> Vec<Vector2<f64>> {
    let side = layout.pitch();
    let k = (side / spacing).ceil().max(1.0) as usize;
    let rot = Rotation2::new(psi);
    let mut out = Vec::with_capacity(layout.n() * (k + 1) * (k + 1));
    for p in layout.positions() {
        for a in 0..=k {
            for b in 0..=k {
                let local = p + Vector2::new(
                    side * (a as f64 / k as f64 - 0.5),
                    side * (b as f64 / k as f64 - 0.5),
                );
                out.push(center + rot * local);
            }
        }
    }
    out
}

fn footprint_radius(layout: &AssemblyLayout) -> f64 {
    let half = layout.pitch() * 0.5;
    layout
        .positions()
        .iter()
        .map(|p| (p.x.abs() + half).hypot(p.y.abs() + half))
        .fold(0.0, f64::max)
}

fn footprint_clear(
    center: &Vector2<f64>,
    psi: f64,
    layout: &AssemblyLayout,
    env: &Environment,
    margin: f64,
    radius: f64,
) -> bool {
    // The interpolated field changes by at most √2 per meter.
    if env.sdf_at(center) - std::f64::consts::SQRT_2 * radius > margin {
        return true;
    }
    footprint_points(center, psi, layout, 0.5 * env.resolution())
        .iter()
        .all(|q| env.sdf_at(q) > margin)
}

/// True when every footprint sample of the assembly at `node` keeps more
/// than `margin` clearance. Points outside the map count as collisions.
pub fn footprint_collision_check(
    node: &SE3Node,
    layout: &AssemblyLayout,
    env: &Environment,
    margin: f64,
) -> bool {
    footprint_clear(&node.xy(), node.yaw(), layout, env, margin, footprint_radius(layout))
}

/// Yaw period under which the unit outline set maps onto itself.
fn outline_period(layout: &AssemblyLayout) -> f64 {
    let tol = 1e-9 * (1.0 + layout.pitch());
    for period in [PI / 2.0, PI] {
        let rot = Rotation2::new(period);
        let ok = layout.positions().iter().all(|p| {
            let q = rot * p;
            layout.positions().iter().any(|p2| (q - p2).norm() <= tol)
        });
        if ok {
            return period;
        }
    }
    TAU
}

#[derive(PartialEq)]
struct Open {
    f: f64,
    g: f64,
    state: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on f, then larger g first, then state index for determinism
        other
            .f
            .total_cmp(&self.f)
            .then(self.g.total_cmp(&other.g))
            .then(other.state.cmp(&self.state))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Lattice<'a> {
    env: &'a Environment,
    layout: &'a AssemblyLayout,
    bins: usize,
    step: f64,
    base_yaw: f64,
    margin: f64,
    radius: f64,
    clear: Vec<Option<bool>>,
}

impl Lattice<'_> {
    fn index(&self, c: usize, r: usize, k: usize) -> usize {
        (r * self.env.width() + c) * self.bins + k
    }

    fn decode(&self, s: usize) -> (usize, usize, usize) {
        let k = s % self.bins;
        let cell = s / self.bins;
        (cell % self.env.width(), cell / self.env.width(), k)
    }

    fn yaw(&self, k: usize) -> f64 {
        if self.bins == 1 {
            self.base_yaw
        } else {
            wrap_angle(k as f64 * self.step)
        }
    }

    fn state_clear(&mut self, s: usize) -> bool {
        if let Some(v) = self.clear[s] {
            return v;
        }
        let (c, r, k) = self.decode(s);
        let v = footprint_clear(
            &self.env.cell_center(c, r),
            self.yaw(k),
            self.layout,
            self.env,
            self.margin,
            self.radius,
        );
        self.clear[s] = Some(v);
        v
    }

    fn edge_clear(&self, a: (usize, usize, usize), b: (usize, usize, usize), dk: i64) -> bool {
        let pa = self.env.cell_center(a.0, a.1);
        let pb = self.env.cell_center(b.0, b.1);
        let mid = 0.5 * (pa + pb);
        let yaw = self.yaw(a.2) + 0.5 * dk as f64 * self.step;
        footprint_clear(&mid, yaw, self.layout, self.env, self.margin, self.radius)
    }
}

/// Runs the search from `start` to `goal` on the lattice formed by the
/// environment cells and the configured yaw bins.
///
/// Node priority is `g + h + J`, with `h` the Euclidean distance to the goal
/// cell and `J = l_phi·|ψ* − ψ|` measured modulo the assembly's torque
/// symmetry period. Expanded states are closed and never reopened.
pub fn astar_plan(
    env: &Environment,
    start: &SE3Node,
    goal: &SE3Node,
    layout: &AssemblyLayout,
    faults: &FaultState,
    spec: &AttitudeObjectiveSpec,
    config: &PlannerConfig,
) -> Result<DiscreteSequence, PlannerError> {
    config.validate()?;
    faults.check_layout(layout)?;
    spec.validate(layout)?;
    let bins = config.yaw_bins()?;

    let (phi_star, sym_period) = if spec.l_phi > 0.0 {
        (
            optimal_attitude(layout, faults, spec)?.z,
            yaw_symmetry_period(layout, faults, spec)?,
        )
    } else {
        (0.0, TAU)
    };
    let attitude_cost = |yaw: f64| spec.l_phi * wrapped_yaw_distance(phi_star, yaw, sym_period);
    let goal_period = outline_period(layout);

    let mut lat = Lattice {
        env,
        layout,
        bins,
        step: config.yaw_step,
        base_yaw: start.yaw(),
        margin: config.margin,
        radius: footprint_radius(layout),
        clear: vec![None; env.width() * env.height() * bins],
    };
    let snap_yaw = |yaw: f64| -> usize {
        if bins == 1 {
            0
        } else {
            ((wrap_angle(yaw) / config.yaw_step).round() as i64).rem_euclid(bins as i64) as usize
        }
    };
    let (sc, sr) = env
        .cell_of(&start.xy())
        .ok_or(PlannerError::BlockedEndpoint("start"))?;
    let (gc, gr) = env
        .cell_of(&goal.xy())
        .ok_or(PlannerError::BlockedEndpoint("goal"))?;
    let s0 = lat.index(sc, sr, snap_yaw(start.yaw()));
    let goal_yaw = if bins == 1 { start.yaw() } else { lat.yaw(snap_yaw(goal.yaw())) };
    let goal_xy = env.cell_center(gc, gr);
    if !lat.state_clear(s0) {
        return Err(PlannerError::BlockedEndpoint("start"));
    }
    let g0 = lat.index(gc, gr, snap_yaw(goal.yaw()));
    if !lat.state_clear(g0) {
        return Err(PlannerError::BlockedEndpoint("goal"));
    }
    let is_goal = |lat: &Lattice, s: usize| {
        let (c, r, k) = lat.decode(s);
        (c, r) == (gc, gr)
            && (bins == 1
                || wrapped_yaw_distance(lat.yaw(k), goal_yaw, goal_period) < 0.5 * config.yaw_step)
    };

    let total = lat.clear.len();
    let mut g_cost = vec![f64::INFINITY; total];
    let mut parent = vec![usize::MAX; total];
    let mut closed = vec![false; total];
    let mut heap = BinaryHeap::new();
    let h = |lat: &Lattice, s: usize| {
        let (c, r, _) = lat.decode(s);
        (env.cell_center(c, r) - goal_xy).norm()
    };
    g_cost[s0] = 0.0;
    let f0 = h(&lat, s0) + attitude_cost(lat.yaw(s0 % bins));
    heap.push(Open { f: f0, g: 0.0, state: s0 });

    let mut moves: Vec<(i64, i64, i64)> = Vec::new();
    let dks: &[i64] = if bins == 1 { &[0] } else { &[-1, 0, 1] };
    for dr in -1..=1 {
        for dc in -1..=1 {
            for &dk in dks {
                if (dr, dc, dk) != (0, 0, 0) {
                    moves.push((dc, dr, dk));
                }
            }
        }
    }

    let res = env.resolution();
    let mut expansions = 0;
    let found = loop {
        let Some(Open { g, state, .. }) = heap.pop() else {
            return Err(PlannerError::NoPath(expansions));
        };
        if closed[state] || g > g_cost[state] {
            continue;
        }
        if is_goal(&lat, state) {
            break state;
        }
        closed[state] = true;
        expansions += 1;
        if expansions > config.max_expansions {
            return Err(PlannerError::NoPath(expansions));
        }
        let (c, r, k) = lat.decode(state);
        for &(dc, dr, dk) in &moves {
            let (nc, nr) = (c as i64 + dc, r as i64 + dr);
            if nc < 0 || nr < 0 || nc >= env.width() as i64 || nr >= env.height() as i64 {
                continue;
            }
            let nk = (k as i64 + dk).rem_euclid(bins as i64) as usize;
            let (nc, nr) = (nc as usize, nr as usize);
            let next = lat.index(nc, nr, nk);
            if closed[next] || !lat.state_clear(next) {
                continue;
            }
            if !lat.edge_clear((c, r, k), (nc, nr, nk), dk) {
                continue;
            }
            let step = res * ((dc * dc + dr * dr) as f64).sqrt()
                + config.yaw_cost * config.yaw_step * dk.abs() as f64;
            let ng = g + step;
            if ng < g_cost[next] {
                g_cost[next] = ng;
                parent[next] = state;
                let f = ng + h(&lat, next) + attitude_cost(lat.yaw(nk));
                heap.push(Open { f, g: ng, state: next });
            }
        }
    };

    let mut chain = vec![found];
    while let Some(&s) = chain.last() {
        if parent[s] == usize::MAX {
            break;
        }
        chain.push(parent[s]);
    }
    chain.reverse();
    let z = start.position.z;
    let mut nodes = Vec::with_capacity(chain.len());
    let mut att_sum = 0.0;
    for (i, &s) in chain.iter().enumerate() {
        let (c, r, k) = lat.decode(s);
        let p = env.cell_center(c, r);
        let yaw = lat.yaw(k);
        let j = attitude_cost(yaw);
        att_sum += j;
        let mut node = SE3Node::new(p.x, p.y, z, yaw);
        node.parent = i.checked_sub(1);
        node.g = g_cost[s];
        node.f = g_cost[s] + h(&lat, s) + j;
        nodes.push(node);
    }
    Ok(DiscreteSequence {
        path_cost: g_cost[found],
        attitude_cost: att_sum,
        nodes,
        expansions,
        phi_star,
    })
}
