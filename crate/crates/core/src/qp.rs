//! Small dense quadratic programs of the form
//!
//! ```text
//! minimize   ½‖x‖² + gᵀx
//! subject to A x = b,  lo ≤ x ≤ hi
//! ```
//!
//! Equality constraints are solved through the KKT system; bounds are handled
//! by a dual active-set loop (Goldfarb–Idnani with identity Hessian), which
//! starts from the equality-constrained optimum and adds the most violated
//! bound each step. Sizes here are a handful of variables, so everything is
//! recomputed densely.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("equality constraints are inconsistent (residual {residual:.3e})")]
    InconsistentEqualities { residual: f64 },
    #[error("KKT system is singular")]
    SingularKkt,
    #[error("bounds and equalities have no common point")]
    Infeasible,
    #[error("active-set loop did not converge in {0} iterations")]
    IterationLimit(usize),
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub iterations: usize,
}

/// Problem description; `lo`/`hi` may contain infinities.
#[derive(Debug, Clone)]
pub struct BoundedLsq {
    pub g: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

const TOL: f64 = 1e-11;

impl BoundedLsq {
    /// Minimum-norm problem (`g = 0`) with bounds.
    pub fn min_norm(a: DMatrix<f64>, b: DVector<f64>, lo: DVector<f64>, hi: DVector<f64>) -> Self {
        let n = a.ncols();
        BoundedLsq {
            g: DVector::zeros(n),
            a,
            b,
            lo,
            hi,
        }
    }

    pub fn solve(&self) -> Result<QpSolution, QpError> {
        let n = self.g.len();
        if self.a.ncols() != n || self.a.nrows() != self.b.len() {
            return Err(QpError::Dimension("A must be m×n with b of length m".into()));
        }
        if self.lo.len() != n || self.hi.len() != n {
            return Err(QpError::Dimension("bounds must have length n".into()));
        }
        if (0..n).any(|j| self.lo[j] > self.hi[j]) {
            return Err(QpError::Infeasible);
        }

        let scale = 1.0 + self.b.amax() + self.a.amax();
        let (rows, x) = solve_equalities(&self.a, &self.b, &self.g, scale)?;

        // Inequalities as cᵀx ≥ d: lower bounds then upper bounds.
        let mut cons: Vec<(usize, f64, f64)> = Vec::new(); // (var, sign, d)
        for j in 0..n {
            if self.lo[j].is_finite() {
                cons.push((j, 1.0, self.lo[j]));
            }
            if self.hi[j].is_finite() {
                cons.push((j, -1.0, -self.hi[j]));
            }
        }
        let normal = |k: usize| -> DVector<f64> {
            let (j, s, _) = cons[k];
            let mut v = DVector::zeros(n);
            v[j] = s;
            v
        };
        let slack = |x: &DVector<f64>, k: usize| -> f64 {
            let (j, s, d) = cons[k];
            s * x[j] - d
        };

        let mut x = x;
        // Active constraint normals: equality rows first, then inequalities.
        let mut active: Vec<usize> = Vec::new();
        let mut u: Vec<f64> = Vec::new();
        let n_eq = rows.nrows();
        let bound_scale = 1.0 + x.amax();

        let max_iter = 50 * (cons.len() + 1);
        let mut iterations = 0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(QpError::IterationLimit(max_iter));
            }
            let mut worst = None;
            let mut worst_s = -TOL * bound_scale;
            for k in 0..cons.len() {
                if active.contains(&k) {
                    continue;
                }
                let s = slack(&x, k);
                if s < worst_s {
                    worst_s = s;
                    worst = Some(k);
                }
            }
            let Some(p) = worst else {
                return Ok(QpSolution { x, iterations });
            };
            let np = normal(p);
            let mut u_p = 0.0;
            loop {
                iterations += 1;
                if iterations > max_iter {
                    return Err(QpError::IterationLimit(max_iter));
                }
                let mut nmat = DMatrix::zeros(n, n_eq + active.len());
                for r in 0..n_eq {
                    nmat.set_column(r, &rows.row(r).transpose());
                }
                for (c, &k) in active.iter().enumerate() {
                    nmat.set_column(n_eq + c, &normal(k));
                }
                let (z, r) = if nmat.ncols() == 0 {
                    (np.clone(), DVector::zeros(0))
                } else {
                    let ntn = nmat.transpose() * &nmat;
                    let chol = ntn.cholesky().ok_or(QpError::SingularKkt)?;
                    let r = chol.solve(&(nmat.transpose() * &np));
                    (&np - &nmat * &r, r)
                };
                // Largest dual step before an active inequality multiplier hits zero.
                let mut t1 = f64::INFINITY;
                let mut drop = None;
                for (c, &uc) in u.iter().enumerate() {
                    let rc = r[n_eq + c];
                    if rc > TOL {
                        let t = uc / rc;
                        if t < t1 {
                            t1 = t;
                            drop = Some(c);
                        }
                    }
                }
                let z_norm = z.norm();
                if z_norm <= 1e-12 {
                    let Some(l) = drop else {
                        return Err(QpError::Infeasible);
                    };
                    for (c, uc) in u.iter_mut().enumerate() {
                        *uc -= t1 * r[n_eq + c];
                    }
                    u_p += t1;
                    active.remove(l);
                    u.remove(l);
                    continue;
                }
                let t2 = -slack(&x, p) / z.dot(&np);
                let t = t1.min(t2);
                x += t * &z;
                for (c, uc) in u.iter_mut().enumerate() {
                    *uc -= t * r[n_eq + c];
                }
                u_p += t;
                if t2 <= t1 {
                    active.push(p);
                    u.push(u_p);
                    break;
                }
                let l = drop.expect("finite t1 implies a blocking constraint");
                active.remove(l);
                u.remove(l);
            }
        }
    }
}

/// Drops linearly dependent rows of `A`, checks consistency, then solves the
/// KKT system `[I Aᵀ; A 0] [x; λ] = [−g; b]`.
fn solve_equalities(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    g: &DVector<f64>,
    scale: f64,
) -> Result<(DMatrix<f64>, DVector<f64>), QpError> {
    let n = g.len();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut keep = Vec::new();
    for i in 0..a.nrows() {
        let row = a.row(i).transpose();
        let norm = row.norm();
        if norm == 0.0 {
            continue;
        }
        let mut v = row.clone();
        for q in &basis {
            let c = q.dot(&v);
            v -= c * q;
        }
        let vn = v.norm();
        if vn > 1e-10 * norm {
            basis.push(v / vn);
            keep.push(i);
        }
    }
    let m = keep.len();
    let mut rows = DMatrix::zeros(m, n);
    let mut rhs = DVector::zeros(m);
    for (r, &i) in keep.iter().enumerate() {
        rows.set_row(r, &a.row(i));
        rhs[r] = b[i];
    }

    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).fill_with_identity();
    kkt.view_mut((0, n), (n, m)).copy_from(&rows.transpose());
    kkt.view_mut((n, 0), (m, n)).copy_from(&rows);
    let mut full_rhs = DVector::zeros(n + m);
    full_rhs.rows_mut(0, n).copy_from(&(-g));
    full_rhs.rows_mut(n, m).copy_from(&rhs);
    let sol = kkt.lu().solve(&full_rhs).ok_or(QpError::SingularKkt)?;
    let x = sol.rows(0, n).into_owned();

    let residual = (a * &x - b).amax();
    if residual > 1e-9 * scale {
        return Err(QpError::InconsistentEqualities { residual });
    }
    Ok((rows, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn inf(n: usize) -> (DVector<f64>, DVector<f64>) {
        (
            DVector::from_element(n, f64::NEG_INFINITY),
            DVector::from_element(n, f64::INFINITY),
        )
    }

    #[test]
    fn min_norm_equality() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![3.0]);
        let (lo, hi) = inf(3);
        let s = BoundedLsq::min_norm(a, b, lo, hi).solve().unwrap();
        assert_relative_eq!(s.x, DVector::from_vec(vec![1.0, 1.0, 1.0]), epsilon = 1e-12);
    }

    #[test]
    fn dependent_rows_are_dropped() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 0.0, 0.0]);
        let b = DVector::from_vec(vec![2.0, 4.0, 0.0]);
        let (lo, hi) = inf(2);
        let s = BoundedLsq::min_norm(a, b, lo, hi).solve().unwrap();
        assert_relative_eq!(s.x, DVector::from_vec(vec![1.0, 1.0]), epsilon = 1e-12);
    }

    #[test]
    fn inconsistent_rows_are_reported() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let b = DVector::from_vec(vec![2.0, 5.0]);
        let (lo, hi) = inf(2);
        assert!(matches!(
            BoundedLsq::min_norm(a, b, lo, hi).solve(),
            Err(QpError::InconsistentEqualities { .. })
        ));
    }

    #[test]
    fn lower_bound_becomes_active() {
        // x0 + x1 + x2 = 1, x0 − x2 = 2, x ≥ 0  →  unconstrained gives x2 < 0
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 1.0, 0.0, -1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let lo = DVector::zeros(3);
        let hi = DVector::from_element(3, f64::INFINITY);
        let err = BoundedLsq::min_norm(a.clone(), b.clone(), lo.clone(), hi.clone()).solve();
        // x2 ≥ 0 forces x0 ≥ 2, then x1 ≤ −1: infeasible
        assert_eq!(err.unwrap_err(), QpError::Infeasible);

        let b = DVector::from_vec(vec![3.0, 2.0]);
        let s = BoundedLsq::min_norm(a, b, lo, hi).solve().unwrap();
        // optimum on x2 = 0: x0 = 2, x1 = 1
        assert_relative_eq!(s.x, DVector::from_vec(vec![2.0, 1.0, 0.0]), epsilon = 1e-12);
    }

    #[test]
    fn upper_bounds_and_linear_term() {
        // minimize ½‖x − (5, 5)‖² with x ≤ 1 → (1, 1)
        let a = DMatrix::zeros(0, 2);
        let b = DVector::zeros(0);
        let p = BoundedLsq {
            g: DVector::from_vec(vec![-5.0, -5.0]),
            a,
            b,
            lo: DVector::zeros(2),
            hi: DVector::from_element(2, 1.0),
        };
        let s = p.solve().unwrap();
        assert_relative_eq!(s.x, DVector::from_vec(vec![1.0, 1.0]), epsilon = 1e-12);
    }

    #[test]
    fn crossed_bounds_are_infeasible() {
        let p = BoundedLsq::min_norm(
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DVector::from_element(1, 2.0),
            DVector::from_element(1, 1.0),
        );
        assert_eq!(p.solve().unwrap_err(), QpError::Infeasible);
    }
}
