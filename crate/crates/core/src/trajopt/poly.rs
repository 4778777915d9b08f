//! Piecewise quintic trajectories over (x, y, z, ψ) with joint velocities and
//! accelerations chosen to minimize total squared jerk.

use nalgebra::{Matrix2, Matrix3, Matrix6, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::TrajError;

pub const AXES: usize = 4;

/// Position, velocity and acceleration on one axis.
type Knot = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseTrajectory {
    /// Segment boundary values `(x, y, z, ψ)`, yaw unwrapped.
    pub waypoints: Vec<[f64; AXES]>,
    /// Segment durations, seconds.
    pub durations: Vec<f64>,
    /// Per segment, per axis: `c0 + c1·τ + … + c5·τ⁵` with `τ ∈ [0, T]`.
    pub coeffs: Vec<[[f64; 6]; AXES]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryState {
    pub t: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub jerk: Vector3<f64>,
    pub psi: f64,
    pub psi_rate: f64,
    pub psi_accel: f64,
    /// Set when the requested time lay outside `[0, ΣT]`.
    pub clamped: bool,
}

/// Quintic coefficients for the boundary values `(p0, v0, a0)` → `(p1, v1, a1)`.
pub fn quintic(k0: Knot, k1: Knot, t: f64) -> [f64; 6] {
    let m = boundary_map(t);
    let x = Vector6::new(k0[0], k0[1], k0[2], k1[0], k1[1], k1[2]);
    let c = m * x;
    [c[0], c[1], c[2], c[3], c[4], c[5]]
}

/// Linear map from boundary values to coefficients.
fn boundary_map(t: f64) -> Matrix6<f64> {
    let (t2, t3, t4, t5) = (t * t, t * t * t, t.powi(4), t.powi(5));
    #[rustfmt::skip]
    let m = Matrix6::new(
        1.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 0.5, 0.0, 0.0, 0.0,
        -10.0 / t3, -6.0 / t2, -1.5 / t, 10.0 / t3, -4.0 / t2, 0.5 / t,
        15.0 / t4, 8.0 / t3, 1.5 / t2, -15.0 / t4, 7.0 / t3, -1.0 / t2,
        -6.0 / t5, -3.0 / t4, -0.5 / t3, 6.0 / t5, -3.0 / t4, 0.5 / t3,
    );
    m
}

/// `Q` with `∫₀ᵀ jerk² dτ = xᵀ Q x` for boundary values `x`.
pub fn jerk_form(t: f64) -> Matrix6<f64> {
    let m = boundary_map(t);
    let (t2, t3, t4, t5) = (t * t, t * t * t, t.powi(4), t.powi(5));
    let w = Matrix3::new(
        36.0 * t,
        72.0 * t2,
        120.0 * t3,
        72.0 * t2,
        192.0 * t3,
        360.0 * t4,
        120.0 * t3,
        360.0 * t4,
        720.0 * t5,
    );
    let m3 = m.fixed_rows::<3>(3);
    m3.transpose() * w * m3
}

/// Evaluates the polynomial and its first three derivatives.
pub fn eval_poly(c: &[f64; 6], s: f64) -> [f64; 4] {
    let p = c[0] + s * (c[1] + s * (c[2] + s * (c[3] + s * (c[4] + s * c[5]))));
    let v = c[1] + s * (2.0 * c[2] + s * (3.0 * c[3] + s * (4.0 * c[4] + s * 5.0 * c[5])));
    let a = 2.0 * c[2] + s * (6.0 * c[3] + s * (12.0 * c[4] + s * 20.0 * c[5]));
    let j = 6.0 * c[3] + s * (24.0 * c[4] + s * 60.0 * c[5]);
    [p, v, a, j]
}

/// Interior joint velocity/acceleration minimizing total jerk on one axis,
/// with zero velocity and acceleration at both ends. Solved as a block
/// tridiagonal system with 2×2 blocks.
fn joint_derivatives(p: &[f64], forms: &[Matrix6<f64>]) -> Vec<Vector2<f64>> {
    let m = forms.len();
    let n = m - 1;
    if n == 0 {
        return Vec::new();
    }
    // Blocks of Q: state order (p, v, a); z = (v, a) = indices 1..3 / 4..6.
    let zz = |q: &Matrix6<f64>, r: usize, c: usize| -> Matrix2<f64> {
        q.fixed_view::<2, 2>(r + 1, c + 1).into_owned()
    };
    let zp = |q: &Matrix6<f64>, r: usize, c: usize| -> Vector2<f64> {
        q.fixed_view::<2, 1>(r + 1, c).into_owned()
    };
    let mut diag = Vec::with_capacity(n);
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    let mut rhs = Vec::with_capacity(n);
    for k in 1..=n {
        let (ql, qr) = (&forms[k - 1], &forms[k]);
        diag.push(zz(ql, 3, 3) + zz(qr, 0, 0));
        lower.push(zz(ql, 3, 0));
        upper.push(zz(qr, 0, 3));
        rhs.push(-(zp(ql, 3, 0) * p[k - 1] + zp(ql, 3, 3) * p[k] + zp(qr, 0, 0) * p[k] + zp(qr, 0, 3) * p[k + 1]));
    }
    // Forward elimination.
    let mut c_prime: Vec<Matrix2<f64>> = Vec::with_capacity(n);
    let mut d_prime: Vec<Vector2<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let (b, d) = if i == 0 {
            (diag[0], rhs[0])
        } else {
            (
                diag[i] - lower[i] * c_prime[i - 1],
                rhs[i] - lower[i] * d_prime[i - 1],
            )
        };
        let inv = b.try_inverse().unwrap_or_else(Matrix2::zeros);
        c_prime.push(inv * upper[i]);
        d_prime.push(inv * d);
    }
    let mut z = vec![Vector2::zeros(); n];
    z[n - 1] = d_prime[n - 1];
    for i in (0..n - 1).rev() {
        z[i] = d_prime[i] - c_prime[i] * z[i + 1];
    }
    z
}

impl PiecewiseTrajectory {
    /// Builds the minimum-jerk trajectory through `waypoints` with the given
    /// segment durations; rest at both ends.
    pub fn from_waypoints(
        waypoints: Vec<[f64; AXES]>,
        durations: Vec<f64>,
    ) -> Result<Self, TrajError> {
        if waypoints.len() < 2 {
            return Err(TrajError::TooShort(waypoints.len()));
        }
        if durations.len() + 1 != waypoints.len() {
            return Err(TrajError::Invalid(format!(
                "{} waypoints need {} durations, got {}",
                waypoints.len(),
                waypoints.len() - 1,
                durations.len()
            )));
        }
        if let Some(t) = durations.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(TrajError::Invalid(format!("segment duration must be positive, got {t}")));
        }
        if waypoints.iter().flatten().any(|v| !v.is_finite()) {
            return Err(TrajError::Invalid("waypoint is not finite".into()));
        }
        let m = durations.len();
        let forms: Vec<Matrix6<f64>> = durations.iter().map(|&t| jerk_form(t)).collect();
        let mut coeffs = vec![[[0.0; 6]; AXES]; m];
        for axis in 0..AXES {
            let p: Vec<f64> = waypoints.iter().map(|w| w[axis]).collect();
            let z = joint_derivatives(&p, &forms);
            let knot = |k: usize| -> Knot {
                if k == 0 || k == m {
                    [p[k], 0.0, 0.0]
                } else {
                    [p[k], z[k - 1][0], z[k - 1][1]]
                }
            };
            for s in 0..m {
                coeffs[s][axis] = quintic(knot(s), knot(s + 1), durations[s]);
            }
        }
        Ok(PiecewiseTrajectory {
            waypoints,
            durations,
            coeffs,
        })
    }

    pub fn segments(&self) -> usize {
        self.durations.len()
    }

    pub fn total_time(&self) -> f64 {
        self.durations.iter().sum()
    }

    /// Segment index and local time for `t`, which must lie in range.
    fn locate(&self, t: f64) -> (usize, f64) {
        let mut start = 0.0;
        let last = self.segments() - 1;
        for (k, &d) in self.durations.iter().enumerate() {
            if t < start + d || k == last {
                return (k, (t - start).clamp(0.0, d));
            }
            start += d;
        }
        unreachable!("trajectory has at least one segment")
    }

    /// State on segment `k` at local time `s`.
    pub fn eval_segment(&self, k: usize, s: f64) -> [[f64; 4]; AXES] {
        std::array::from_fn(|axis| eval_poly(&self.coeffs[k][axis], s))
    }

    pub fn evaluate(&self, t: f64) -> TrajectoryState {
        let total = self.total_time();
        let clamped = !(0.0..=total).contains(&t);
        let tc = t.clamp(0.0, total);
        let (k, s) = self.locate(tc);
        let e = self.eval_segment(k, s);
        TrajectoryState {
            t: tc,
            position: Vector3::new(e[0][0], e[1][0], e[2][0]),
            velocity: Vector3::new(e[0][1], e[1][1], e[2][1]),
            acceleration: Vector3::new(e[0][2], e[1][2], e[2][2]),
            jerk: Vector3::new(e[0][3], e[1][3], e[2][3]),
            psi: e[3][0],
            psi_rate: e[3][1],
            psi_accel: e[3][2],
            clamped,
        }
    }

    /// Largest position/velocity/acceleration jump across segment joints.
    pub fn joint_mismatch(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..self.segments().saturating_sub(1) {
            let left = self.eval_segment(k, self.durations[k]);
            let right = self.eval_segment(k + 1, 0.0);
            for axis in 0..AXES {
                for d in 0..3 {
                    worst = worst.max((left[axis][d] - right[axis][d]).abs());
                }
            }
        }
        worst
    }

    /// Same waypoints, durations multiplied by `factor`.
    pub fn time_scaled(&self, factor: f64) -> Result<Self, TrajError> {
        Self::from_waypoints(
            self.waypoints.clone(),
            self.durations.iter().map(|t| t * factor).collect(),
        )
    }

    /// CSV of `(t, x, y, z, psi, vx, vy, vz, psi_rate)` sampled every `dt`,
    /// always including the final time.
    pub fn to_csv(&self, dt: f64) -> String {
        let mut out = String::from("t,x,y,z,psi,vx,vy,vz,psi_rate\n");
        let total = self.total_time();
        let steps = (total / dt).floor() as usize;
        let mut times: Vec<f64> = (0..=steps).map(|i| i as f64 * dt).collect();
        if total - times.last().copied().unwrap_or(0.0) > 1e-9 {
            times.push(total);
        }
        for t in times {
            let s = self.evaluate(t);
            out.push_str(&format!(
                "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                t,
                s.position.x,
                s.position.y,
                s.position.z,
                s.psi,
                s.velocity.x,
                s.velocity.y,
                s.velocity.z,
                s.psi_rate
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quintic_meets_boundary_values() {
        let (k0, k1, t) = ([0.3, -0.2, 0.5], [1.7, 0.4, -0.1], 1.3);
        let c = quintic(k0, k1, t);
        let a = eval_poly(&c, 0.0);
        let b = eval_poly(&c, t);
        for d in 0..3 {
            assert_relative_eq!(a[d], k0[d], epsilon = 1e-12);
            assert_relative_eq!(b[d], k1[d], epsilon = 1e-10);
        }
    }

    #[test]
    fn jerk_form_matches_quadrature() {
        let (k0, k1, t) = ([0.0, 0.5, -0.3], [2.0, -0.1, 0.2], 1.7);
        let c = quintic(k0, k1, t);
        let n = 20_000;
        let h = t / n as f64;
        let numeric: f64 = (0..n)
            .map(|i| eval_poly(&c, (i as f64 + 0.5) * h)[3].powi(2) * h)
            .sum();
        let x = Vector6::new(k0[0], k0[1], k0[2], k1[0], k1[1], k1[2]);
        let exact = (x.transpose() * jerk_form(t) * x)[0];
        assert_relative_eq!(exact, numeric, max_relative = 1e-6);
    }

    #[test]
    fn rest_to_rest_segment() {
        let d = 2.0;
        let t = 1.6;
        let tr = PiecewiseTrajectory::from_waypoints(vec![[0.0; 4], [d, 0.0, 0.0, 0.0]], vec![t]).unwrap();
        let mid = tr.evaluate(t / 2.0);
        assert_relative_eq!(mid.velocity.x, 1.875 * d / t, epsilon = 1e-12);
        assert!(mid.acceleration.x.abs() < 1e-12);
        let s0 = tr.evaluate(0.0);
        assert_eq!(s0.velocity, Vector3::zeros());
        assert_relative_eq!(tr.evaluate(t).position.x, d, epsilon = 1e-12);
        let late = tr.evaluate(t + 1.0);
        assert!(late.clamped);
        assert_relative_eq!(late.position.x, d, epsilon = 1e-12);
    }

    #[test]
    fn collinear_joint_is_continuous() {
        let tr = PiecewiseTrajectory::from_waypoints(
            vec![[0.0, 0.0, 1.0, 0.0], [1.0, 0.0, 1.0, 0.2], [2.5, 0.0, 1.0, 0.4]],
            vec![1.0, 1.5],
        )
        .unwrap();
        assert!(tr.joint_mismatch() < 1e-6);
        // interior joint moves, so its velocity is not zero
        assert!(tr.evaluate(1.0).velocity.x > 0.1);
    }

    #[test]
    fn joint_solution_is_stationary() {
        // perturbing a joint derivative must not lower the total jerk
        let wp = vec![[0.0; 4], [1.0, 0.5, 0.0, 0.0], [1.5, 1.5, 0.0, 0.3], [3.0, 1.0, 0.0, 0.0]];
        let dur = vec![1.0, 0.8, 1.4];
        let tr = PiecewiseTrajectory::from_waypoints(wp.clone(), dur.clone()).unwrap();
        let jerk = |coeffs: &Vec<[[f64; 6]; AXES]>| -> f64 {
            coeffs
                .iter()
                .zip(&dur)
                .map(|(c, &t)| {
                    let k0 = eval_poly(&c[0], 0.0);
                    let k1 = eval_poly(&c[0], t);
                    let x = Vector6::new(k0[0], k0[1], k0[2], k1[0], k1[1], k1[2]);
                    (x.transpose() * jerk_form(t) * x)[0]
                })
                .sum()
        };
        let base = jerk(&tr.coeffs);
        for (dv, da) in [(0.01, 0.0), (-0.01, 0.0), (0.0, 0.01), (0.0, -0.01)] {
            let mut c = tr.coeffs.clone();
            let e0 = eval_poly(&c[0][0], 0.0);
            let e1 = eval_poly(&c[0][0], dur[0]);
            let e2 = eval_poly(&c[1][0], dur[1]);
            let k1 = [e1[0], e1[1] + dv, e1[2] + da];
            c[0][0] = quintic([e0[0], e0[1], e0[2]], k1, dur[0]);
            c[1][0] = quintic(k1, [e2[0], e2[1], e2[2]], dur[1]);
            assert!(jerk(&c) > base);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(PiecewiseTrajectory::from_waypoints(vec![[0.0; 4]], vec![]).is_err());
        assert!(PiecewiseTrajectory::from_waypoints(vec![[0.0; 4]; 2], vec![0.0]).is_err());
        assert!(PiecewiseTrajectory::from_waypoints(vec![[0.0; 4]; 3], vec![1.0]).is_err());
    }

    #[test]
    fn csv_has_expected_rows() {
        let tr = PiecewiseTrajectory::from_waypoints(vec![[0.0; 4], [1.0, 0.0, 0.0, 0.0]], vec![1.0]).unwrap();
        let csv = tr.to_csv(0.1);
        assert_eq!(csv.lines().count(), 1 + 11);
        assert!(csv.starts_with("t,x,y,z,psi,vx,vy,vz,psi_rate"));
    }
}
