//! Quasi-Newton descent over interior waypoints and log-durations.

use serde::{Deserialize, Serialize};

use super::cost::{total_cost, AttitudeTarget, CostBreakdown, CostWeights};
use super::{PiecewiseTrajectory, TrajError};
use crate::assembly::AssemblyLayout;
use crate::planner::Environment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    /// Stop once an accepted step improves the cost by less than this
    /// fraction.
    pub rel_tol: f64,
    /// Central-difference step in decision units.
    pub fd_step: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Curvature pairs kept for the L-BFGS direction; 0 gives plain
    /// steepest descent.
    pub memory: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iters: 300,
            rel_tol: 1e-6,
            fd_step: 1e-5,
            armijo: 1e-4,
            max_backtracks: 50,
            memory: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub trajectory: PiecewiseTrajectory,
    pub breakdown: CostBreakdown,
    /// Cost of the initial trajectory followed by every accepted iterate.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// The last line search found no decrease; the best iterate is returned.
    pub line_search_failed: bool,
}

struct Problem<'a> {
    base: &'a PiecewiseTrajectory,
    env: &'a Environment,
    layout: &'a AssemblyLayout,
    weights: &'a CostWeights,
    target: &'a AttitudeTarget,
}

impl Problem<'_> {
    fn interior(&self) -> usize {
        self.base.waypoints.len() - 2
    }

    fn encode(&self, traj: &PiecewiseTrajectory) -> Vec<f64> {
        let mut x = Vec::with_capacity(3 * self.interior() + traj.segments());
        for w in &traj.waypoints[1..traj.waypoints.len() - 1] {
            x.extend_from_slice(&[w[0], w[1], w[3]]);
        }
        x.extend(traj.durations.iter().map(|t| t.ln()));
        x
    }

    fn decode(&self, x: &[f64]) -> Result<PiecewiseTrajectory, TrajError> {
        let n = self.interior();
        let mut wp = self.base.waypoints.clone();
        for k in 0..n {
            wp[k + 1][0] = x[3 * k];
            wp[k + 1][1] = x[3 * k + 1];
            wp[k + 1][3] = x[3 * k + 2];
        }
        let durations = x[3 * n..].iter().map(|l| l.exp()).collect();
        PiecewiseTrajectory::from_waypoints(wp, durations)
    }

    fn cost(&self, x: &[f64]) -> f64 {
        match self.decode(x) {
            Ok(t) => total_cost(&t, self.env, self.layout, self.weights, self.target).total,
            Err(_) => f64::INFINITY,
        }
    }

    fn gradient(&self, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .into_iter()
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                (self.cost(&xp) - self.cost(&xm)) / (2.0 * h)
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// L-BFGS two-loop recursion: approximate inverse Hessian times `g`.
fn lbfgs_direction(g: &[f64], pairs: &[(Vec<f64>, Vec<f64>)]) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y) in pairs.iter().rev() {
        let a = dot(s, &q) / dot(y, s);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y)) = pairs.last() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = dot(y, &q) / dot(y, s);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

/// Locally minimizes [`total_cost`] starting from `traj`. Every accepted
/// iterate strictly lowers the cost; continuity holds by construction since
/// each candidate is rebuilt from its waypoints and durations.
pub fn optimize(
    traj: &PiecewiseTrajectory,
    env: &Environment,
    layout: &AssemblyLayout,
    weights: &CostWeights,
    target: &AttitudeTarget,
    config: &OptimizerConfig,
) -> Result<OptimizeResult, TrajError> {
    weights.validate().map_err(TrajError::Invalid)?;
    let problem = Problem {
        base: traj,
        env,
        layout,
        weights,
        target,
    };
    let mut x = problem.encode(traj);
    let mut f = problem.cost(&x);
    if !f.is_finite() {
        return Err(TrajError::Invalid("initial cost is not finite".into()));
    }
    let mut history = vec![f];
    let mut converged = false;
    let mut line_search_failed = false;
    let mut iterations = 0;
    let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut g = problem.gradient(&x, config.fd_step);

    while iterations < config.max_iters {
        iterations += 1;
        let g2 = dot(&g, &g);
        if !(g2 > 0.0) || !g2.is_finite() {
            converged = g2 == 0.0;
            break;
        }
        let mut d = lbfgs_direction(&g, &pairs);
        let mut slope = dot(&g, &d);
        if pairs.is_empty() || !(slope < 0.0) {
            // steepest descent with a step that moves the decision vector by 0.1
            pairs.clear();
            d = g.iter().map(|v| -v * 0.1 / g2.sqrt()).collect();
            slope = dot(&g, &d);
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..config.max_backtracks {
            let cand: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            let fc = problem.cost(&cand);
            if fc <= f + config.armijo * alpha * slope && fc < f {
                accepted = Some((cand, fc));
                break;
            }
            alpha *= 0.5;
        }
        let Some((cand, fc)) = accepted else {
            if pairs.is_empty() {
                line_search_failed = true;
                break;
            }
            // stale curvature; retry from steepest descent
            pairs.clear();
            continue;
        };
        let improvement = (f - fc) / f.abs().max(1e-12);
        let g_new = problem.gradient(&cand, config.fd_step);
        let s_k: Vec<f64> = cand.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y_k: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        if config.memory > 0 && dot(&s_k, &y_k) > 1e-12 * dot(&s_k, &s_k).sqrt() * dot(&y_k, &y_k).sqrt() {
            pairs.push((s_k, y_k));
            if pairs.len() > config.memory {
                pairs.remove(0);
            }
        }
        x = cand;
        f = fc;
        g = g_new;
        history.push(f);
        if improvement < config.rel_tol {
            converged = true;
            break;
        }
    }

    let trajectory = problem.decode(&x)?;
    let breakdown = total_cost(&trajectory, env, layout, weights, target);
    Ok(OptimizeResult {
        trajectory,
        breakdown,
        history,
        iterations,
        converged,
        line_search_failed,
    })
}
