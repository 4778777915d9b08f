//! Smoothness, time, obstacle and dynamic-feasibility penalties.

use nalgebra::{Rotation2, Vector2};
use serde::{Deserialize, Serialize};

use super::PiecewiseTrajectory;
use crate::assembly::AssemblyLayout;
use crate::fault::FaultState;
use crate::planner::{
    optimal_attitude, wrapped_yaw_distance, yaw_symmetry_period, AttitudeObjectiveSpec, Environment,
    PlannerError,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostWeights {
    pub lambda_m: f64,
    pub lambda_t: f64,
    pub lambda_o: f64,
    pub lambda_d: f64,
    pub lambda_v: f64,
    pub lambda_a: f64,
    pub lambda_j: f64,
    pub lambda_phi: f64,
    /// m/s
    pub v_max: f64,
    /// m/s²
    pub a_max: f64,
    /// m/s³
    pub j_max: f64,
    /// Obstacle clearance below which the penalty starts, meters.
    pub margin: f64,
    pub samples_per_segment: usize,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            lambda_m: 1.0,
            lambda_t: 10.0,
            lambda_o: 1e4,
            lambda_d: 1.0,
            lambda_v: 1.0,
            lambda_a: 1.0,
            lambda_j: 1.0,
            lambda_phi: 1.0,
            v_max: 1.0,
            a_max: 2.0,
            j_max: 8.0,
            margin: 0.05,
            samples_per_segment: 16,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<(), String> {
        let w = [
            self.lambda_m,
            self.lambda_t,
            self.lambda_o,
            self.lambda_d,
            self.lambda_v,
            self.lambda_a,
            self.lambda_j,
            self.lambda_phi,
            self.margin,
        ];
        if w.iter().any(|v| !(*v >= 0.0)) {
            return Err("cost weights and margin must be non-negative".into());
        }
        if !(self.v_max > 0.0 && self.a_max > 0.0 && self.j_max > 0.0) {
            return Err("v_max, a_max and j_max must be positive".into());
        }
        if self.samples_per_segment == 0 {
            return Err("samples_per_segment must be at least 1".into());
        }
        Ok(())
    }
}

/// Yaw the trajectory should hold and the period modulo which it is compared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttitudeTarget {
    pub psi: f64,
    pub period: f64,
}

impl AttitudeTarget {
    pub fn for_assembly(
        layout: &AssemblyLayout,
        faults: &FaultState,
        spec: &AttitudeObjectiveSpec,
    ) -> Result<Self, PlannerError> {
        Ok(AttitudeTarget {
            psi: optimal_attitude(layout, faults, spec)?.z,
            period: yaw_symmetry_period(layout, faults, spec)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub j_m: f64,
    pub j_t: f64,
    pub g_o: f64,
    pub g_v: f64,
    pub g_a: f64,
    pub g_j: f64,
    pub g_phi: f64,
    pub total: f64,
}

fn hinge3(x: f64) -> f64 {
    if x > 0.0 {
        x * x * x
    } else {
        0.0
    }
}

/// Signed distance that keeps decreasing outside the map instead of
/// jumping to −∞, so penalties stay finite and informative.
fn sdf_extended(env: &Environment, p: &Vector2<f64>) -> f64 {
    if env.in_bounds(p) {
        return env.sdf_at(p);
    }
    let w = env.width() as f64 * env.resolution();
    let h = env.height() as f64 * env.resolution();
    let dx = (-p.x).max(p.x - w).max(0.0);
    let dy = (-p.y).max(p.y - h).max(0.0);
    -dx.hypot(dy)
}

/// Obstacle penalty of the footprint at one pose.
pub(crate) fn footprint_penalty(
    env: &Environment,
    layout: &AssemblyLayout,
    center: &Vector2<f64>,
    psi: f64,
    margin: f64,
) -> f64 {
    let rot = Rotation2::new(psi);
    let side = layout.pitch();
    let spacing = 0.5 * env.resolution();
    let k = (side / spacing).ceil().max(1.0) as usize;
    let mut total = 0.0;
    for p in layout.positions() {
        let c = center + rot * p;
        // a unit whose center is clear by more than its half-diagonal·√2 is skipped
        if sdf_extended(env, &c) - side > margin {
            continue;
        }
        for a in 0..=k {
            for b in 0..=k {
                let local = p + Vector2::new(
                    side * (a as f64 / k as f64 - 0.5),
                    side * (b as f64 / k as f64 - 0.5),
                );
                let q = center + rot * local;
                total += hinge3(margin - sdf_extended(env, &q));
            }
        }
    }
    total
}

/// Evaluates every cost term at `samples_per_segment` midpoint samples per
/// segment. `J_m` is the midpoint-rule integral of squared position jerk.
pub fn total_cost(
    traj: &PiecewiseTrajectory,
    env: &Environment,
    layout: &AssemblyLayout,
    w: &CostWeights,
    target: &AttitudeTarget,
) -> CostBreakdown {
    let n = w.samples_per_segment.max(1);
    let mut b = CostBreakdown {
        j_t: traj.total_time(),
        ..CostBreakdown::default()
    };
    for k in 0..traj.segments() {
        let t = traj.durations[k];
        let h = t / n as f64;
        for i in 0..n {
            let e = traj.eval_segment(k, (i as f64 + 0.5) * h);
            let norm = |d: usize| (e[0][d].powi(2) + e[1][d].powi(2) + e[2][d].powi(2)).sqrt();
            let jerk = norm(3);
            // yaw is a fourth axis of the smoothness term
            b.j_m += (jerk * jerk + e[3][3] * e[3][3]) * h;
            b.g_v += hinge3(norm(1) - w.v_max);
            b.g_a += hinge3(norm(2) - w.a_max);
            b.g_j += hinge3(jerk - w.j_max);
            b.g_phi += wrapped_yaw_distance(target.psi, e[3][0], target.period);
            if w.lambda_o > 0.0 {
                let c = Vector2::new(e[0][0], e[1][0]);
                b.g_o += footprint_penalty(env, layout, &c, e[3][0], w.margin);
            }
        }
    }
    let g_d = w.lambda_v * b.g_v + w.lambda_a * b.g_a + w.lambda_j * b.g_j + w.lambda_phi * b.g_phi;
    b.total = w.lambda_m * b.j_m + w.lambda_t * b.j_t + w.lambda_o * b.g_o + w.lambda_d * g_d;
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::UnitSpec;
    use std::f64::consts::PI;

    fn layout() -> AssemblyLayout {
        AssemblyLayout::grid(2, 1, 0.3, UnitSpec::default()).unwrap()
    }

    fn slow_line(psi: f64) -> PiecewiseTrajectory {
        PiecewiseTrajectory::from_waypoints(
            vec![[1.0, 1.0, 1.0, psi], [2.0, 1.5, 1.0, psi]],
            vec![6.0],
        )
        .unwrap()
    }

    #[test]
    fn slow_open_space_has_no_violations() {
        let env = Environment::empty(40, 30, 0.1).unwrap();
        let target = AttitudeTarget { psi: 0.3, period: PI };
        let b = total_cost(&slow_line(0.3), &env, &layout(), &CostWeights::default(), &target);
        assert_eq!((b.g_o, b.g_v, b.g_a, b.g_j), (0.0, 0.0, 0.0, 0.0));
        assert!(b.g_phi < 1e-12);
        assert!(b.j_m > 0.0);
        assert_eq!(b.j_t, 6.0);
    }

    #[test]
    fn yaw_deviation_is_counted_per_sample() {
        let env = Environment::empty(40, 30, 0.1).unwrap();
        let target = AttitudeTarget { psi: 0.0, period: PI };
        let b = total_cost(&slow_line(0.25), &env, &layout(), &CostWeights::default(), &target);
        assert!((b.g_phi - 16.0 * 0.25).abs() < 1e-9);
        // equivalent modulo the period
        let b = total_cost(&slow_line(0.25 + PI), &env, &layout(), &CostWeights::default(), &target);
        assert!((b.g_phi - 16.0 * 0.25).abs() < 1e-9);
    }

    #[test]
    fn faster_timing_raises_dynamic_terms() {
        let env = Environment::empty(60, 60, 0.1).unwrap();
        let w = CostWeights::default();
        let target = AttitudeTarget { psi: 0.0, period: PI };
        let tr = PiecewiseTrajectory::from_waypoints(
            vec![[1.0, 1.0, 1.0, 0.0], [3.0, 2.0, 1.0, 0.0], [4.0, 4.0, 1.0, 0.0]],
            vec![1.2, 1.2],
        )
        .unwrap();
        let slow = total_cost(&tr, &env, &layout(), &w, &target);
        let fast = total_cost(&tr.time_scaled(0.5).unwrap(), &env, &layout(), &w, &target);
        assert!(fast.g_v > slow.g_v && fast.g_a > slow.g_a && fast.g_j > slow.g_j);
    }

    #[test]
    fn obstacle_penalty_appears_near_walls() {
        let env = Environment::empty(40, 30, 0.1)
            .unwrap()
            .with_box(Vector2::new(1.4, 1.2), Vector2::new(1.6, 1.4));
        let target = AttitudeTarget { psi: 0.0, period: PI };
        let b = total_cost(&slow_line(0.0), &env, &layout(), &CostWeights::default(), &target);
        assert!(b.g_o > 0.0);
    }
}
