//! Kinematics-loop model predictive control.
//!
//! The discrete kinematics are linearized stage by stage along the
//! reference, the state trajectory is eliminated by forward substitution,
//! and the resulting box-constrained QP over the stacked body twists is
//! handed to the ADMM solver.

use log::warn;
use nalgebra::{DMatrix, DVector, Matrix3, Matrix3xX, Vector3};

use crate::error::{Error, Result};
use crate::estimation::is_spd;
use crate::models::{body_to_world, kinematic_step, BodyVelocity, PoseState, RobotParams};
use crate::qp::{solve_qp_admm, AdmmSettings, QpProblem, QpStatus, WarmStart};
use crate::scalar::Real;

/// Affine stage model `x+ = A x + B xi + c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearizedModel<T: Real> {
    pub a: Matrix3<T>,
    pub b: Matrix3<T>,
    pub c: Vector3<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig<T: Real> {
    pub horizon: usize,
    pub q_stage: Matrix3<T>,
    pub q_terminal: Matrix3<T>,
    pub r_stage: Matrix3<T>,
    pub xi_min: Vector3<T>,
    pub xi_max: Vector3<T>,
}

impl<T: Real> Default for MpcConfig<T> {
    fn default() -> Self {
        let q = Matrix3::from_diagonal(&Vector3::new(T::lit(10.0), T::lit(10.0), T::one()));
        Self {
            horizon: 10,
            q_stage: q,
            q_terminal: q,
            r_stage: Matrix3::identity() * T::lit(0.1),
            xi_min: Vector3::new(T::lit(-1.0), T::lit(-1.0), T::lit(-2.0)),
            xi_max: Vector3::new(T::lit(1.0), T::lit(1.0), T::lit(2.0)),
        }
    }
}

impl<T: Real> MpcConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("MPC horizon must be at least 1"));
        }
        let psd = |m: &Matrix3<T>| {
            (m - m.transpose()).amax() <= T::lit(1e-12)
                && m.symmetric_eigenvalues().iter().all(|e| *e >= -T::lit(1e-12))
        };
        if !psd(&self.q_stage) || !psd(&self.q_terminal) {
            return Err(Error::config(
                "MPC state weights must be symmetric positive semidefinite",
            ));
        }
        if !is_spd(&self.r_stage) {
            return Err(Error::config("MPC input weight must be positive definite"));
        }
        if (0..3).any(|i| self.xi_min[i] >= self.xi_max[i]) {
            return Err(Error::config("MPC twist bounds must satisfy min < max"));
        }
        Ok(())
    }
}

/// Jacobians of the discrete kinematics at `(pose_ref, xi_ref)` plus the
/// residual that makes the affine model exact there.
pub fn linearize_kinematics<T: Real>(
    pose_ref: &PoseState<T>,
    xi_ref: &BodyVelocity<T>,
    params: &RobotParams<T>,
) -> LinearizedModel<T> {
    let a = crate::estimation::kinematic_jacobian(pose_ref, xi_ref, params);
    let b = body_to_world(pose_ref.theta) * params.ts;
    let x = pose_ref.to_vector();
    let c = kinematic_step(pose_ref, xi_ref, params).to_vector() - a * x - b * xi_ref.to_vector();
    LinearizedModel { a, b, c }
}

/// Condensed QP over `z = (xi_0, ..., xi_{N-1})`.
///
/// `reference` holds the N+1 target poses aligned with `x_0..x_N`; the
/// `x_0` term is constant and dropped.
pub fn build_condensed_qp<T: Real>(
    models: &[LinearizedModel<T>],
    pose_est: &PoseState<T>,
    reference: &[PoseState<T>],
    config: &MpcConfig<T>,
) -> Result<QpProblem<T>> {
    let n = config.horizon;
    if models.len() != n {
        return Err(Error::config(format!(
            "expected {n} stage models, got {}",
            models.len()
        )));
    }
    if reference.len() != n + 1 {
        return Err(Error::config(format!(
            "expected {} reference poses, got {}",
            n + 1,
            reference.len()
        )));
    }
    let dim = 3 * n;
    let two = T::lit(2.0);
    let mut p = DMatrix::<T>::zeros(dim, dim);
    let mut q = DVector::<T>::zeros(dim);
    // Sensitivity of the current stage state to z, and its free response.
    let mut sens = Matrix3xX::<T>::zeros(dim);
    let mut free = pose_est.to_vector();
    for (i, m) in models.iter().enumerate() {
        sens = m.a * sens;
        sens.view_mut((0, 3 * i), (3, 3)).copy_from(&m.b);
        free = m.a * free + m.c;
        let w = if i + 1 == n {
            &config.q_terminal
        } else {
            &config.q_stage
        };
        let ws = w * &sens;
        p += sens.transpose() * &ws * two;
        let err = free - reference[i + 1].to_vector();
        q += sens.transpose() * (w * err) * two;
    }
    for i in 0..n {
        let mut block = p.view_mut((3 * i, 3 * i), (3, 3));
        block += config.r_stage * two;
    }
    let p = (&p + p.transpose()) * T::lit(0.5);
    let lower = DVector::from_fn(dim, |k, _| config.xi_min[k % 3]);
    let upper = DVector::from_fn(dim, |k, _| config.xi_max[k % 3]);
    Ok(QpProblem { p, q, lower, upper })
}

/// Body-frame twist that moves `from` onto `to` in one step.
pub fn reference_twist<T: Real>(from: &PoseState<T>, to: &PoseState<T>, params: &RobotParams<T>) -> BodyVelocity<T> {
    let delta = (to.to_vector() - from.to_vector()) / params.ts;
    BodyVelocity::from_vector(&(body_to_world(from.theta).transpose() * delta))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcOutput<T: Real> {
    pub xi: BodyVelocity<T>,
    pub iterations: usize,
    pub status: QpStatus,
}

/// Receding-horizon controller holding the warm start between ticks.
#[derive(Debug, Clone)]
pub struct KinematicsMpc<T: Real> {
    pub config: MpcConfig<T>,
    pub settings: AdmmSettings,
    warm: WarmStart<T>,
}

impl<T: Real> KinematicsMpc<T> {
    pub fn new(config: MpcConfig<T>, settings: AdmmSettings) -> Self {
        Self {
            config,
            settings,
            warm: WarmStart::default(),
        }
    }

    /// `reference[0]` is aligned with `pose_est`; at least N+1 poses are
    /// required and extra trailing poses are ignored.
    pub fn step(
        &mut self,
        pose_est: &PoseState<T>,
        reference: &[PoseState<T>],
        xi_prev: &BodyVelocity<T>,
        params: &RobotParams<T>,
    ) -> Result<MpcOutput<T>> {
        let n = self.config.horizon;
        if reference.len() < n + 1 {
            return Err(Error::config(format!(
                "MPC needs {} reference poses, got {}",
                n + 1,
                reference.len()
            )));
        }
        let reference = &reference[..=n];
        let models: Vec<_> = reference
            .windows(2)
            .map(|w| linearize_kinematics(&w[0], &reference_twist(&w[0], &w[1], params), params))
            .collect();
        let qp = build_condensed_qp(&models, pose_est, reference, &self.config)?;
        let sol = solve_qp_admm(&qp, &self.settings, &self.warm)?;
        if sol.status != QpStatus::Solved {
            warn!(
                "kinematics QP hit the iteration cap (primal {:?}, dual {:?}); holding previous twist",
                sol.primal_residual.to_f64_lossy(),
                sol.dual_residual.to_f64_lossy()
            );
            self.warm = WarmStart::default();
            return Ok(MpcOutput {
                xi: *xi_prev,
                iterations: sol.iterations,
                status: sol.status,
            });
        }
        let first = Vector3::new(sol.z[0], sol.z[1], sol.z[2]).zip_zip_map(
            &self.config.xi_min,
            &self.config.xi_max,
            |v, lo, hi| v.clamp(lo, hi),
        );
        self.warm = WarmStart {
            z: Some(shift_stages(&sol.z)),
            y: Some(shift_stages(&sol.y)),
        };
        Ok(MpcOutput {
            xi: BodyVelocity::from_vector(&first),
            iterations: sol.iterations,
            status: sol.status,
        })
    }
}

fn shift_stages<T: Real>(v: &DVector<T>) -> DVector<T> {
    let n = v.len();
    DVector::from_fn(n, |k, _| if k + 3 < n { v[k + 3] } else { v[k] })
}

/// Single cold-started solve.
pub fn kinematics_mpc_step<T: Real>(
    pose_est: &PoseState<T>,
    reference: &[PoseState<T>],
    xi_prev: &BodyVelocity<T>,
    params: &RobotParams<T>,
    config: &MpcConfig<T>,
    settings: &AdmmSettings,
) -> Result<MpcOutput<T>> {
    KinematicsMpc::new(config.clone(), *settings).step(pose_est, reference, xi_prev, params)
}
