//! Discrete sequence → smooth trajectory, and its local optimization.

mod cost;
mod optimize;
mod poly;

pub use cost::{total_cost, AttitudeTarget, CostBreakdown, CostWeights};
pub use optimize::{optimize, OptimizeResult, OptimizerConfig};
pub use poly::{eval_poly, jerk_form, quintic, PiecewiseTrajectory, TrajectoryState, AXES};

use thiserror::Error;

use crate::assembly::AssemblyLayout;
use crate::planner::{footprint_collision_check, wrap_angle, DiscreteSequence, Environment, SE3Node};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajError {
    #[error("sequence needs at least 2 distinct nodes, got {0}")]
    TooShort(usize),
    #[error("invalid trajectory input: {0}")]
    Invalid(String),
}

/// Nominal speeds used to time an initial trajectory.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct Timing {
    /// m/s
    pub v_nominal: f64,
    /// rad/s; segments that mostly rotate are timed by this rate.
    pub yaw_rate_nominal: f64,
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            v_nominal: 0.5,
            yaw_rate_nominal: 0.5,
        }
    }
}

/// Keeps the first and last node plus every node where the lattice step
/// (position and yaw direction) changes.
pub fn simplify_sequence(seq: &DiscreteSequence) -> Vec<SE3Node> {
    let nodes = &seq.nodes;
    if nodes.len() <= 2 {
        return nodes.clone();
    }
    let step = |a: &SE3Node, b: &SE3Node| {
        let d = b.position - a.position;
        let dpsi = crate::planner::wrap_angle(b.yaw() - a.yaw());
        [d.x, d.y, d.z, dpsi]
    };
    let same = |u: [f64; 4], v: [f64; 4]| u.iter().zip(&v).all(|(a, b)| (a - b).abs() < 1e-9);
    let mut out = vec![nodes[0].clone()];
    for k in 1..nodes.len() - 1 {
        if !same(step(&nodes[k - 1], &nodes[k]), step(&nodes[k], &nodes[k + 1])) {
            out.push(nodes[k].clone());
        }
    }
    out.push(nodes[nodes.len() - 1].clone());
    out
}

/// Greedy line-of-sight pruning: from each kept node, jumps to the farthest
/// later node whose straight pose interpolation (position and shortest yaw
/// turn) keeps the footprint clear by `margin`, checked every half cell.
pub fn shortcut_sequence(
    nodes: &[SE3Node],
    env: &Environment,
    layout: &AssemblyLayout,
    margin: f64,
) -> Vec<SE3Node> {
    if nodes.len() <= 2 {
        return nodes.to_vec();
    }
    let radius = layout
        .positions()
        .iter()
        .map(|p| p.norm() + layout.pitch())
        .fold(0.0, f64::max);
    let step = 0.5 * env.resolution();
    let visible = |a: &SE3Node, b: &SE3Node| {
        let d = b.position - a.position;
        let dpsi = wrap_angle(b.yaw() - a.yaw());
        let n = ((d.norm().max(dpsi.abs() * radius)) / step).ceil().max(1.0) as usize;
        (1..n).all(|i| {
            let s = i as f64 / n as f64;
            let p = a.position + d * s;
            let q = SE3Node::new(p.x, p.y, p.z, a.yaw() + dpsi * s);
            footprint_collision_check(&q, layout, env, margin)
        })
    };
    let mut out = vec![nodes[0].clone()];
    let mut i = 0;
    while i < nodes.len() - 1 {
        let mut j = nodes.len() - 1;
        while j > i + 1 && !visible(&nodes[i], &nodes[j]) {
            j -= 1;
        }
        out.push(nodes[j].clone());
        i = j;
    }
    out
}

/// One segment per consecutive node pair, yaw unwrapped along the way.
/// Segment time is `max(distance / v_nominal, |Δψ| / yaw_rate_nominal)`;
/// pairs with neither translation nor rotation are merged away.
pub fn init_from_sequence(nodes: &[SE3Node], timing: &Timing) -> Result<PiecewiseTrajectory, TrajError> {
    if !(timing.v_nominal > 0.0) || !(timing.yaw_rate_nominal > 0.0) {
        return Err(TrajError::Invalid("nominal speeds must be positive".into()));
    }
    let mut waypoints: Vec<[f64; AXES]> = Vec::with_capacity(nodes.len());
    let mut durations = Vec::with_capacity(nodes.len());
    for node in nodes {
        let p = node.position;
        let Some(last) = waypoints.last() else {
            waypoints.push([p.x, p.y, p.z, node.yaw()]);
            continue;
        };
        let psi = last[3] + crate::planner::wrap_angle(node.yaw() - last[3]);
        let dist = ((p.x - last[0]).powi(2) + (p.y - last[1]).powi(2) + (p.z - last[2]).powi(2)).sqrt();
        let t = (dist / timing.v_nominal).max((psi - last[3]).abs() / timing.yaw_rate_nominal);
        if t < 1e-9 {
            continue;
        }
        waypoints.push([p.x, p.y, p.z, psi]);
        durations.push(t);
    }
    if waypoints.len() < 2 {
        return Err(TrajError::TooShort(waypoints.len()));
    }
    PiecewiseTrajectory::from_waypoints(waypoints, durations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector2;

    fn seq(nodes: Vec<SE3Node>) -> DiscreteSequence {
        DiscreteSequence {
            nodes,
            path_cost: 0.0,
            attitude_cost: 0.0,
            expansions: 0,
            phi_star: 0.0,
        }
    }

    #[test]
    fn simplify_keeps_turns() {
        let pts = [(0.0, 0.0), (0.1, 0.0), (0.2, 0.0), (0.3, 0.1), (0.4, 0.2), (0.5, 0.2)];
        let nodes: Vec<SE3Node> = pts.iter().map(|&(x, y)| SE3Node::new(x, y, 1.0, 0.0)).collect();
        let s = simplify_sequence(&seq(nodes));
        let xs: Vec<f64> = s.iter().map(|n| n.position.x).collect();
        assert_eq!(xs.len(), 4);
        for (a, b) in xs.iter().zip([0.0, 0.2, 0.4, 0.5]) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn shortcut_skips_visible_nodes_and_keeps_corners() {
        use crate::assembly::UnitSpec;
        let layout = AssemblyLayout::grid(1, 1, 0.2, UnitSpec::default()).unwrap();
        let open = Environment::empty(40, 40, 0.1).unwrap();
        let line: Vec<SE3Node> = (0..10).map(|k| SE3Node::new(0.5 + 0.2 * k as f64, 0.5, 0.0, 0.0)).collect();
        let s = shortcut_sequence(&line, &open, &layout, 0.05);
        assert_eq!(s.len(), 2);
        assert_eq!(s[1], line[9]);

        // wall between (0.5, 2) and (2, 0.5) on the diagonal: the corner must stay
        let env = open.with_box(Vector2::new(0.0, 0.0), Vector2::new(1.6, 1.6));
        let path = vec![
            SE3Node::new(0.5, 2.5, 0.0, 0.0),
            SE3Node::new(2.0, 2.5, 0.0, 0.0),
            SE3Node::new(2.5, 2.5, 0.0, 0.0),
            SE3Node::new(2.5, 2.0, 0.0, 0.0),
            SE3Node::new(2.5, 0.5, 0.0, 0.0),
        ];
        let s = shortcut_sequence(&path, &env, &layout, 0.05);
        assert!(s.len() >= 3 && s.len() < path.len());
        for w in s.windows(2) {
            let mid = SE3Node::new(
                0.5 * (w[0].position.x + w[1].position.x),
                0.5 * (w[0].position.y + w[1].position.y),
                0.0,
                0.0,
            );
            assert!(footprint_collision_check(&mid, &layout, &env, 0.05));
        }
    }

    #[test]
    fn init_two_nodes() {
        let nodes = vec![SE3Node::new(0.0, 0.0, 1.0, 0.0), SE3Node::new(2.0, 0.0, 1.0, 0.0)];
        let tr = init_from_sequence(&nodes, &Timing { v_nominal: 0.5, yaw_rate_nominal: 1.0 }).unwrap();
        assert_eq!(tr.segments(), 1);
        assert_relative_eq!(tr.total_time(), 4.0);
        assert_relative_eq!(tr.evaluate(2.0).velocity.x, 1.875 * 2.0 / 4.0, epsilon = 1e-12);
    }

    #[test]
    fn init_merges_duplicates_and_unwraps_yaw() {
        let a = SE3Node::new(0.0, 0.0, 1.0, 3.0);
        let b = SE3Node::new(1.0, 0.0, 1.0, -3.0);
        let nodes = vec![a.clone(), a, b.clone(), b];
        let tr = init_from_sequence(&nodes, &Timing::default()).unwrap();
        assert_eq!(tr.segments(), 1);
        // −3 rad is 2π − 6 ahead of 3 rad
        assert_relative_eq!(tr.waypoints[1][3], 3.0 + (std::f64::consts::TAU - 6.0), epsilon = 1e-12);
        let same = vec![SE3Node::new(0.0, 0.0, 1.0, 0.0); 2];
        assert_eq!(init_from_sequence(&same, &Timing::default()), Err(TrajError::TooShort(1)));
    }
}
