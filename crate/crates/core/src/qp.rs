//! Box-constrained convex QP solver based on operator splitting (ADMM).
//!
//! Solves `min 1/2 z^T P z + q^T z  s.t.  lower <= z <= upper` by splitting
//! the decision variable from its box-projected copy. The linear system of
//! the `z` step has a fixed matrix `P + (sigma + rho) I`, factored once per
//! `rho` value.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem<T: Real> {
    pub p: DMatrix<T>,
    pub q: DVector<T>,
    pub lower: DVector<T>,
    pub upper: DVector<T>,
}

impl<T: Real> QpProblem<T> {
    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, z: &DVector<T>) -> T {
        (z.dot(&(&self.p * z))) * T::lit(0.5) + self.q.dot(z)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.q.len();
        if self.p.shape() != (n, n) || self.lower.len() != n || self.upper.len() != n {
            return Err(Error::config("QP dimensions disagree"));
        }
        if self.lower.iter().zip(self.upper.iter()).any(|(l, u)| l > u) {
            return Err(Error::config("QP lower bound exceeds upper bound"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Solved,
    MaxIterations,
}

impl QpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            QpStatus::Solved => "solved",
            QpStatus::MaxIterations => "max_iterations",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution<T: Real> {
    /// Box-feasible iterate.
    pub z: DVector<T>,
    /// Bound multipliers; `P z + q + y ~ 0` at optimality.
    pub y: DVector<T>,
    pub iterations: usize,
    pub primal_residual: T,
    pub dual_residual: T,
    pub status: QpStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmmSettings {
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    /// Rebalance `rho` from the residual ratio every `adapt_interval` iterations.
    pub adaptive_rho: bool,
    pub adapt_interval: usize,
    /// After convergence, guess the active set from the multipliers and
    /// solve the reduced equality system exactly; kept only if it is
    /// feasible and satisfies the multiplier signs.
    pub polish: bool,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        Self {
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            eps_abs: 1e-4,
            eps_rel: 1e-4,
            max_iter: 4000,
            adaptive_rho: true,
            adapt_interval: 25,
            polish: true,
        }
    }
}

/// Optional warm start for the primal and dual iterates.
#[derive(Debug, Clone)]
pub struct WarmStart<T: Real> {
    pub z: Option<DVector<T>>,
    pub y: Option<DVector<T>>,
}

impl<T: Real> Default for WarmStart<T> {
    fn default() -> Self {
        Self { z: None, y: None }
    }
}

fn project<T: Real>(v: &DVector<T>, lo: &DVector<T>, hi: &DVector<T>) -> DVector<T> {
    DVector::from_fn(v.len(), |i, _| v[i].clamp(lo[i], hi[i]))
}

fn factor<T: Real>(p: &DMatrix<T>, shift: T) -> Result<Cholesky<T, Dyn>> {
    let n = p.nrows();
    Cholesky::new(p + DMatrix::identity(n, n) * shift)
        .ok_or_else(|| Error::numerical("QP KKT matrix is not positive definite"))
}

#[derive(Clone, Copy, PartialEq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

fn polish<T: Real>(problem: &QpProblem<T>, z: &DVector<T>, y: &DVector<T>) -> Option<(DVector<T>, DVector<T>)> {
    let n = problem.dim();
    let (lo, hi) = (&problem.lower, &problem.upper);
    let set: Vec<Bound> = (0..n)
        .map(|i| {
            if z[i] - lo[i] < -y[i] {
                Bound::Lower
            } else if hi[i] - z[i] < y[i] {
                Bound::Upper
            } else {
                Bound::Free
            }
        })
        .collect();
    let mut zp = DVector::from_fn(n, |i, _| match set[i] {
        Bound::Lower => lo[i],
        Bound::Upper => hi[i],
        Bound::Free => z[i],
    });
    let free: Vec<usize> = (0..n).filter(|i| set[*i] == Bound::Free).collect();
    if !free.is_empty() {
        let pff = DMatrix::from_fn(free.len(), free.len(), |a, b| problem.p[(free[a], free[b])]);
        let rhs = DVector::from_fn(free.len(), |a, _| {
            let i = free[a];
            -(problem.q[i]
                + (0..n)
                    .filter(|j| set[*j] != Bound::Free)
                    .fold(T::zero(), |acc, j| acc + problem.p[(i, j)] * zp[j]))
        });
        let sol = Cholesky::new(pff)?.solve(&rhs);
        for (a, &i) in free.iter().enumerate() {
            zp[i] = sol[a];
        }
    }
    let yp = -(&problem.p * &zp + &problem.q);
    let tol = T::lit(1e-10);
    let valid = (0..n).all(|i| match set[i] {
        Bound::Free => zp[i] >= lo[i] - tol && zp[i] <= hi[i] + tol,
        Bound::Lower => yp[i] <= tol,
        Bound::Upper => yp[i] >= -tol,
    });
    if !valid {
        return None;
    }
    let zp = project(&zp, lo, hi);
    let yp = DVector::from_fn(n, |i, _| if set[i] == Bound::Free { T::zero() } else { yp[i] });
    Some((zp, yp))
}

pub fn solve_qp_admm<T: Real>(
    problem: &QpProblem<T>,
    settings: &AdmmSettings,
    warm: &WarmStart<T>,
) -> Result<QpSolution<T>> {
    problem.validate()?;
    let n = problem.dim();
    let (lo, hi) = (&problem.lower, &problem.upper);
    let sigma = T::lit(settings.sigma);
    let alpha = T::lit(settings.alpha);
    let eps_abs = T::lit(settings.eps_abs);
    let eps_rel = T::lit(settings.eps_rel);
    let mut rho = T::lit(settings.rho);

    let mut z = warm
        .z
        .as_ref()
        .filter(|w| w.len() == n)
        .map(|w| project(w, lo, hi))
        .unwrap_or_else(|| project(&DVector::zeros(n), lo, hi));
    let mut x = z.clone();
    let mut y = warm
        .y
        .as_ref()
        .filter(|w| w.len() == n)
        .cloned()
        .unwrap_or_else(|| DVector::zeros(n));
    let mut chol = factor(&problem.p, sigma + rho)?;

    let mut prim = T::zero();
    let mut dual = T::zero();
    for it in 1..=settings.max_iter {
        let rhs = &x * sigma - &problem.q + &z * rho - &y;
        let x_tilde = chol.solve(&rhs);
        let relaxed = &x_tilde * alpha + &z * (T::one() - alpha);
        x = &x_tilde * alpha + &x * (T::one() - alpha);
        let z_new = project(&(&relaxed + &y / rho), lo, hi);
        y += (&relaxed - &z_new) * rho;
        z = z_new;

        let px = &problem.p * &x;
        prim = (&x - &z).amax();
        dual = (&px + &problem.q + &y).amax();
        let eps_prim = eps_abs + eps_rel * x.amax().max(z.amax());
        let eps_dual = eps_abs + eps_rel * px.amax().max(y.amax()).max(problem.q.amax());
        if it == settings.max_iter || !(prim.is_finite() && dual.is_finite()) {
            break;
        }
        if prim <= eps_prim && dual <= eps_dual {
            if settings.polish {
                if let Some((zp, yp)) = polish(problem, &z, &y) {
                    z = zp;
                    y = yp;
                }
            }
            let pz = &problem.p * &z;
            return Ok(QpSolution {
                iterations: it,
                primal_residual: prim,
                dual_residual: (pz + &problem.q + &y).amax(),
                z,
                y,
                status: QpStatus::Solved,
            });
        }
        if settings.adaptive_rho && settings.adapt_interval > 0 && it % settings.adapt_interval == 0 {
            let tiny = T::lit(1e-30);
            let num = prim / (x.amax().max(z.amax()) + tiny);
            let den = dual / (px.amax().max(y.amax()).max(problem.q.amax()) + tiny);
            let scale = (num / (den + tiny)).sqrt();
            let candidate = (rho * scale).clamp(T::lit(1e-6), T::lit(1e6));
            if candidate > rho * T::lit(5.0) || candidate < rho / T::lit(5.0) {
                rho = candidate;
                chol = factor(&problem.p, sigma + rho)?;
            }
        }
    }
    if !(prim.is_finite() && dual.is_finite()) {
        return Err(Error::numerical("ADMM iterates diverged"));
    }
    Ok(QpSolution {
        z,
        y,
        iterations: settings.max_iter,
        primal_residual: prim,
        dual_residual: dual,
        status: QpStatus::MaxIterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn box_qp(p: &[f64], q: &[f64], lo: f64, hi: f64) -> QpProblem<f64> {
        let n = q.len();
        QpProblem {
            p: DMatrix::from_row_slice(n, n, p),
            q: DVector::from_row_slice(q),
            lower: DVector::repeat(n, lo),
            upper: DVector::repeat(n, hi),
        }
    }

    #[test]
    fn clipped_scalar() {
        let qp = box_qp(&[1.0], &[-1.0], 0.0, 0.5);
        let sol = solve_qp_admm(&qp, &AdmmSettings::default(), &WarmStart::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert_eq!(sol.z[0], 0.5);
    }

    #[test]
    fn unconstrained_matches_newton() {
        let qp = box_qp(
            &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0],
            &[1.0, -2.0, 0.5],
            -1e9,
            1e9,
        );
        let sol = solve_qp_admm(&qp, &AdmmSettings::default(), &WarmStart::default()).unwrap();
        let exact = qp.p.clone().cholesky().unwrap().solve(&(-&qp.q));
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.z - exact).amax() < 1e-3);
    }

    #[test]
    fn solved_implies_feasible_and_stationary() {
        let qp = box_qp(&[2.0, 0.5, 0.5, 1.0], &[3.0, -4.0], -0.7, 0.8);
        let sol = solve_qp_admm(&qp, &AdmmSettings::default(), &WarmStart::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert!(sol.z.iter().all(|v| (-0.7..=0.8).contains(v)));
        let stat = (&qp.p * &sol.z + &qp.q + &sol.y).amax();
        assert!(stat <= 1e-3);
        assert_relative_eq!(sol.z[1], 0.8);
    }

    #[test]
    fn warm_start_cuts_iterations() {
        let qp = box_qp(&[3.0, 1.0, 1.0, 2.0], &[-1.0, 0.3], -2.0, 2.0);
        let s = AdmmSettings::default();
        let cold = solve_qp_admm(&qp, &s, &WarmStart::default()).unwrap();
        let warm = WarmStart {
            z: Some(cold.z.clone()),
            y: Some(cold.y.clone()),
        };
        let hot = solve_qp_admm(&qp, &s, &warm).unwrap();
        assert!(hot.iterations <= cold.iterations);
    }

    #[test]
    fn iteration_cap_reports_status() {
        let qp = box_qp(&[1000.0, 0.0, 0.0, 1.0], &[-1.0, 5.0], -1.0, 1.0);
        let s = AdmmSettings {
            max_iter: 2,
            adaptive_rho: false,
            ..Default::default()
        };
        let sol = solve_qp_admm(&qp, &s, &WarmStart::default()).unwrap();
        assert_eq!(sol.status, QpStatus::MaxIterations);
        assert_eq!(sol.iterations, 2);
    }

    #[test]
    fn rejects_inverted_bounds() {
        let qp = box_qp(&[1.0], &[0.0], 1.0, -1.0);
        assert!(solve_qp_admm(&qp, &AdmmSettings::default(), &WarmStart::default()).is_err());
    }

    #[test]
    fn polishing_recovers_exact_solution_on_ill_conditioned_problem() {
        // Unconstrained optimum of the first coordinate lies far outside its
        // box; the second is free with a tiny curvature.
        let qp = box_qp(&[10.0, 0.0, 0.0, 1e-3], &[-50.0, 2e-4], -1.0, 1.0);
        let exact = [1.0, -0.2];
        let rough = solve_qp_admm(
            &qp,
            &AdmmSettings {
                polish: false,
                ..Default::default()
            },
            &WarmStart::default(),
        )
        .unwrap();
        let fine = solve_qp_admm(&qp, &AdmmSettings::default(), &WarmStart::default()).unwrap();
        assert_eq!(fine.status, QpStatus::Solved);
        assert_relative_eq!(fine.z[0], exact[0], epsilon = 1e-12);
        assert_relative_eq!(fine.z[1], exact[1], epsilon = 1e-12);
        assert!(fine.y[0] > 0.0 && fine.y[1] == 0.0);
        assert!(
            (&fine.z - DVector::from_row_slice(&exact)).amax() <= (&rough.z - DVector::from_row_slice(&exact)).amax()
        );
    }
}
