//! Extended Kalman filter primitives and the two loop-specific filters.
//!
//! Covariances are symmetrized after every predict and update. The update
//! uses the plain `(I - K H) P` form. Gains are obtained from a Cholesky
//! factorization of the innovation covariance; nothing is inverted
//! explicitly.

use nalgebra::{Cholesky, Matrix3, Matrix3x4, SMatrix, SVector, Vector3};

use crate::error::{Error, Result};
use crate::ftc::drift_term;
use crate::models::{kinematic_step, BodyVelocity, PoseState, RobotParams, WheelTorques};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBelief<T: Real, const N: usize> {
    pub mean: SVector<T, N>,
    pub covariance: SMatrix<T, N, N>,
}

impl<T: Real, const N: usize> GaussianBelief<T, N> {
    pub fn new(mean: SVector<T, N>, covariance: SMatrix<T, N, N>) -> Self {
        Self { mean, covariance }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateResult<T: Real, const N: usize, const M: usize> {
    pub belief: GaussianBelief<T, N>,
    pub innovation: SVector<T, M>,
    pub innovation_cov: SMatrix<T, M, M>,
}

impl<T: Real, const N: usize, const M: usize> UpdateResult<T, N, M> {
    /// Normalized innovation squared `e^T S^-1 e`.
    pub fn nis(&self) -> Result<T> {
        let chol = Cholesky::new(self.innovation_cov)
            .ok_or_else(|| Error::numerical("innovation covariance not positive definite"))?;
        Ok(self.innovation.dot(&chol.solve(&self.innovation)))
    }
}

/// Process and observation covariances of both loops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig<T: Real> {
    pub q_kine: Matrix3<T>,
    pub r_kine: Matrix3<T>,
    pub q_dyna: Matrix3<T>,
    pub r_dyna: Matrix3<T>,
}

impl<T: Real> NoiseConfig<T> {
    /// `Q_kine = 0.0025 I`, `R_kine = 0.01 I`, `Q_dyna = 1e-4 I`, `R_dyna = 4e-4 I`.
    pub fn reference() -> Self {
        Self {
            q_kine: Matrix3::identity() * T::lit(0.0025),
            r_kine: Matrix3::identity() * T::lit(0.01),
            q_dyna: Matrix3::identity() * T::lit(0.0001),
            r_dyna: Matrix3::identity() * T::lit(0.0004),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, m) in [
            ("q_kine", &self.q_kine),
            ("r_kine", &self.r_kine),
            ("q_dyna", &self.q_dyna),
            ("r_dyna", &self.r_dyna),
        ] {
            if !is_spd(m) {
                return Err(Error::config(format!("{name} must be symmetric positive definite")));
            }
        }
        Ok(())
    }
}

pub(crate) fn symmetrize<T: Real, const N: usize>(m: &SMatrix<T, N, N>) -> SMatrix<T, N, N> {
    (m + m.transpose()) * T::lit(0.5)
}

pub(crate) fn is_spd<T: Real, const N: usize>(m: &SMatrix<T, N, N>) -> bool {
    let tol = T::lit(1e-9) * (T::one() + m.amax());
    (m - m.transpose()).amax() <= tol && Cholesky::new(*m).is_some()
}

fn debug_check_pd<T: Real, const N: usize>(m: &SMatrix<T, N, N>) {
    debug_assert!(Cholesky::new(*m).is_some(), "covariance lost positive definiteness");
}

/// `mean <- propagate(mean)`, `P <- F P F^T + Q`.
pub fn ekf_predict<T: Real, const N: usize>(
    belief: &GaussianBelief<T, N>,
    propagate: impl FnOnce(&SVector<T, N>) -> SVector<T, N>,
    jacobian: &SMatrix<T, N, N>,
    q: &SMatrix<T, N, N>,
) -> Result<GaussianBelief<T, N>> {
    let mean = propagate(&belief.mean);
    if mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("ekf predict produced a non-finite mean"));
    }
    let cov = symmetrize(&(jacobian * belief.covariance * jacobian.transpose() + q));
    debug_check_pd(&cov);
    Ok(GaussianBelief::new(mean, cov))
}

pub fn ekf_update<T: Real, const N: usize, const M: usize>(
    belief: &GaussianBelief<T, N>,
    obs: &SVector<T, M>,
    h: &SMatrix<T, M, N>,
    r: &SMatrix<T, M, M>,
) -> Result<UpdateResult<T, N, M>> {
    let p = &belief.covariance;
    let s = symmetrize(&(h * p * h.transpose() + r));
    let chol = Cholesky::new(s).ok_or_else(|| Error::numerical("singular innovation covariance"))?;
    // K = P H^T S^-1 = (S^-1 H P)^T with P symmetric.
    let gain: SMatrix<T, N, M> = chol.solve(&(h * p)).transpose();
    let innovation = obs - h * belief.mean;
    let mean = belief.mean + gain * innovation;
    let cov = symmetrize(&((SMatrix::<T, N, N>::identity() - gain * h) * p));
    if mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("ekf update produced a non-finite mean"));
    }
    debug_check_pd(&cov);
    Ok(UpdateResult {
        belief: GaussianBelief::new(mean, cov),
        innovation,
        innovation_cov: s,
    })
}

/// Jacobian of the discrete kinematics with respect to the pose.
pub fn kinematic_jacobian<T: Real>(pose: &PoseState<T>, xi: &BodyVelocity<T>, params: &RobotParams<T>) -> Matrix3<T> {
    let (s, c) = pose.theta.sin_cos();
    let ts = params.ts;
    let mut f = Matrix3::identity();
    f[(0, 2)] = ts * (-xi.u * s - xi.v * c);
    f[(1, 2)] = ts * (xi.u * c - xi.v * s);
    f
}

/// Jacobian of the dynamics drift with respect to the twist.
pub fn drift_jacobian<T: Real>(xi: &BodyVelocity<T>, params: &RobotParams<T>) -> Matrix3<T> {
    let ts = params.ts;
    let one = T::one();
    let dv = one - ts * params.c_v / params.m;
    Matrix3::new(
        dv,
        ts * xi.omega,
        ts * xi.v,
        -ts * xi.omega,
        dv,
        -ts * xi.u,
        T::zero(),
        T::zero(),
        one - ts * params.c_theta / params.i_z,
    )
}

/// Kinematics-loop filter: predict through the discrete kinematics driven by
/// `xi_cmd`, then fuse a direct pose observation.
pub fn kine_filter_step<T: Real>(
    belief: &GaussianBelief<T, 3>,
    xi_cmd: &BodyVelocity<T>,
    obs: &PoseState<T>,
    params: &RobotParams<T>,
    noise: &NoiseConfig<T>,
) -> Result<UpdateResult<T, 3, 3>> {
    let prior_pose = PoseState::from_vector(&belief.mean);
    let jac = kinematic_jacobian(&prior_pose, xi_cmd, params);
    let predicted = ekf_predict(
        belief,
        |m| kinematic_step(&PoseState::from_vector(m), xi_cmd, params).to_vector(),
        &jac,
        &noise.q_kine,
    )?;
    ekf_update(&predicted, &obs.to_vector(), &Matrix3::identity(), &noise.r_kine)
}

/// Dynamics-loop filter for one control-matrix hypothesis.
pub fn dyna_filter_step<T: Real>(
    belief: &GaussianBelief<T, 3>,
    g: &Matrix3x4<T>,
    u_prev: &WheelTorques<T>,
    obs: &BodyVelocity<T>,
    params: &RobotParams<T>,
    noise: &NoiseConfig<T>,
) -> Result<UpdateResult<T, 3, 3>> {
    let prior_xi = BodyVelocity::from_vector(&belief.mean);
    let jac = drift_jacobian(&prior_xi, params);
    let predicted = ekf_predict(
        belief,
        |m| drift_term(&BodyVelocity::from_vector(m), params) + g * u_prev.tau,
        &jac,
        &noise.q_dyna,
    )?;
    ekf_update(&predicted, &obs.to_vector(), &Matrix3::identity(), &noise.r_dyna)
}

/// Convenience initializer: mean from an observation, covariance from `r`.
pub fn belief_from_observation<T: Real>(obs: Vector3<T>, r: &Matrix3<T>) -> GaussianBelief<T, 3> {
    GaussianBelief::new(obs, *r)
}
