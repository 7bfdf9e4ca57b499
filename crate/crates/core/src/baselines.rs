//! Comparison controllers: a cascaded PID and an adaptive certainty-equivalent
//! controller whose fault estimate comes from recursive least squares with
//! exponential forgetting.

use nalgebra::{Cholesky, Matrix3, Matrix3x4, Matrix4, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::estimation::{dyna_filter_step, symmetrize, GaussianBelief, NoiseConfig, UpdateResult};
use crate::ftc::{control_matrix, drift_term, per_model_control};
use crate::models::{body_to_world, mixing_matrix, BodyVelocity, FaultVector, PoseState, RobotParams, WheelTorques};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidGains<T: Real> {
    pub outer_kp: Vector3<T>,
    pub outer_ki: Vector3<T>,
    pub outer_kd: Vector3<T>,
    pub inner_kp: Vector3<T>,
    pub inner_ki: Vector3<T>,
    pub inner_kd: Vector3<T>,
    /// Integrator clamp for the posture channels.
    pub outer_windup: Vector3<T>,
    /// Integrator clamp for the velocity channels.
    pub inner_windup: Vector3<T>,
}

impl<T: Real> Default for PidGains<T> {
    fn default() -> Self {
        let v = |a: f64, b: f64, c: f64| Vector3::new(T::lit(a), T::lit(b), T::lit(c));
        Self {
            outer_kp: v(4.0, 4.0, 2.0),
            outer_ki: v(0.5, 0.5, 0.2),
            outer_kd: v(0.1, 0.1, 0.05),
            inner_kp: v(6.0, 6.0, 3.0),
            inner_ki: v(1.0, 1.0, 0.5),
            inner_kd: Vector3::zeros(),
            outer_windup: v(0.5, 0.5, 0.5),
            inner_windup: v(1.0, 1.0, 1.0),
        }
    }
}

impl<T: Real> PidGains<T> {
    pub fn validate(&self) -> Result<()> {
        let gains = [
            self.outer_kp,
            self.outer_ki,
            self.outer_kd,
            self.inner_kp,
            self.inner_ki,
            self.inner_kd,
        ];
        if gains.iter().any(|g| g.iter().any(|v| *v < T::zero())) {
            return Err(Error::config("PID gains must be non-negative"));
        }
        if [self.outer_windup, self.inner_windup]
            .iter()
            .any(|w| w.iter().any(|v| *v <= T::zero()))
        {
            return Err(Error::config("PID windup bounds must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PidChannel<T: Real> {
    integral: Vector3<T>,
    prev_error: Option<Vector3<T>>,
}

impl<T: Real> PidChannel<T> {
    fn new() -> Self {
        Self {
            integral: Vector3::zeros(),
            prev_error: None,
        }
    }

    fn update(
        &mut self,
        error: Vector3<T>,
        kp: &Vector3<T>,
        ki: &Vector3<T>,
        kd: &Vector3<T>,
        windup: &Vector3<T>,
        ts: T,
    ) -> Vector3<T> {
        self.integral = (self.integral + error * ts).zip_map(windup, |i, w| i.clamp(-w, w));
        let deriv = self.prev_error.map(|p| (error - p) / ts).unwrap_or_else(Vector3::zeros);
        self.prev_error = Some(error);
        kp.component_mul(&error) + ki.component_mul(&self.integral) + kd.component_mul(&deriv)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidOutput<T: Real> {
    pub torques: WheelTorques<T>,
    pub unclamped: WheelTorques<T>,
    pub xi_des: BodyVelocity<T>,
}

/// Posture PID -> twist PID -> wrench -> pseudo-inverse wheel allocation
/// with friction feedforward.
#[derive(Debug, Clone, PartialEq)]
pub struct PidController<T: Real> {
    pub gains: PidGains<T>,
    outer: PidChannel<T>,
    inner: PidChannel<T>,
}

impl<T: Real> PidController<T> {
    pub fn new(gains: PidGains<T>) -> Self {
        Self {
            gains,
            outer: PidChannel::new(),
            inner: PidChannel::new(),
        }
    }

    pub fn integrators(&self) -> (Vector3<T>, Vector3<T>) {
        (self.outer.integral, self.inner.integral)
    }

    pub fn step(
        &mut self,
        pose_est: &PoseState<T>,
        xi_est: &BodyVelocity<T>,
        reference: &PoseState<T>,
        params: &RobotParams<T>,
    ) -> PidOutput<T> {
        let g = &self.gains;
        let world_err = reference.to_vector() - pose_est.to_vector();
        let body_err = body_to_world(pose_est.theta).transpose() * world_err;
        let xi_des = self.outer.update(
            body_err,
            &g.outer_kp,
            &g.outer_ki,
            &g.outer_kd,
            &g.outer_windup,
            params.ts,
        );
        let wrench = self.inner.update(
            xi_des - xi_est.to_vector(),
            &g.inner_kp,
            &g.inner_ki,
            &g.inner_kd,
            &g.inner_windup,
            params.ts,
        );
        let unclamped = WheelTorques::new(allocate_wrench(&wrench, params));
        PidOutput {
            torques: unclamped.clamped(params.tau_min, params.tau_max),
            unclamped,
            xi_des: BodyVelocity::from_vector(&xi_des),
        }
    }
}

/// Minimum-norm wheel torques realizing `wrench` on a healthy platform,
/// plus the friction torque.
pub fn allocate_wrench<T: Real>(wrench: &Vector3<T>, params: &RobotParams<T>) -> Vector4<T> {
    let m = mixing_matrix(params);
    let l = params.l_bar();
    let four = T::lit(4.0);
    // M M^T = diag(4, 4, 4 L^2)
    let inv = Matrix3::from_diagonal(&Vector3::new(
        T::one() / four,
        T::one() / four,
        T::one() / (four * l * l),
    ));
    let forces = m.transpose() * inv * wrench * T::lit(2.0).sqrt();
    forces * params.r + params.tau_f_vec()
}

/// Recursive least-squares estimate of the actuation health.
///
/// The recursion runs on the unconstrained estimate `theta_raw`; `theta_hat`
/// is its projection onto `[0, 1]^4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlsState<T: Real> {
    pub theta_hat: Vector4<T>,
    pub theta_raw: Vector4<T>,
    pub covariance: Matrix4<T>,
    pub forgetting: T,
}

impl<T: Real> RlsState<T> {
    pub fn new(theta0: Vector4<T>, p0: T, forgetting: T) -> Result<Self> {
        if !(forgetting > T::zero() && forgetting <= T::one()) {
            return Err(Error::config("forgetting factor must lie in (0, 1]"));
        }
        if !(p0 > T::zero()) {
            return Err(Error::config("initial RLS covariance scale must be positive"));
        }
        Ok(Self {
            theta_hat: theta0.map(|t| t.clamp(T::zero(), T::one())),
            theta_raw: theta0,
            covariance: Matrix4::identity() * p0,
            forgetting,
        })
    }
}

/// Regressor whose columns are the healthy control-matrix columns scaled by
/// the applied torques; `G(Lambda) u = Phi Lambda`.
pub fn fault_regressor<T: Real>(u: &WheelTorques<T>, params: &RobotParams<T>) -> Matrix3x4<T> {
    control_matrix(&FaultVector::healthy(), params) * Matrix4::from_diagonal(&u.tau)
}

pub fn rls_update<T: Real>(
    state: &RlsState<T>,
    xi_obs_next: &BodyVelocity<T>,
    xi_est: &BodyVelocity<T>,
    u_applied: &WheelTorques<T>,
    params: &RobotParams<T>,
) -> Result<RlsState<T>> {
    let y = xi_obs_next.to_vector() - drift_term(xi_est, params);
    let phi = fault_regressor(u_applied, params);
    let p = &state.covariance;
    let lambda = state.forgetting;
    let s = Matrix3::identity() * lambda + phi * p * phi.transpose();
    let chol = Cholesky::new(symmetrize(&s)).ok_or_else(|| Error::numerical("RLS gain system"))?;
    let gain = chol.solve(&(phi * p)).transpose();
    let theta = state.theta_raw + gain * (y - phi * state.theta_raw);
    let cov = symmetrize(&((p - gain * phi * p) / lambda));
    Ok(RlsState {
        theta_hat: theta.map(|t| t.clamp(T::zero(), T::one())),
        theta_raw: theta,
        covariance: cov,
        forgetting: lambda,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AptOutput<T: Real> {
    pub torques: WheelTorques<T>,
    pub unclamped: WheelTorques<T>,
}

/// Adaptive controller: one filter and one control law built on the current
/// RLS fault estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct AptController<T: Real> {
    pub rls: RlsState<T>,
    pub belief: GaussianBelief<T, 3>,
    pub beta: T,
}

impl<T: Real> AptController<T> {
    pub fn new(rls: RlsState<T>, belief: GaussianBelief<T, 3>, beta: T) -> Self {
        Self { rls, belief, beta }
    }

    pub fn fault_estimate(&self) -> FaultVector<T> {
        FaultVector {
            lambda: self.rls.theta_hat,
        }
    }

    pub fn control(&self, xi_des: &BodyVelocity<T>, params: &RobotParams<T>) -> AptOutput<T> {
        let g = control_matrix(&self.fault_estimate(), params);
        let unclamped = per_model_control(&self.belief, &g, xi_des, self.beta, params);
        AptOutput {
            torques: unclamped.clamped(params.tau_min, params.tau_max),
            unclamped,
        }
    }

    /// RLS refresh from `(obs, previous estimate, u_prev)`, filter update
    /// under the refreshed model, then the certainty-equivalent law.
    pub fn step(
        &mut self,
        obs: &BodyVelocity<T>,
        u_prev: &WheelTorques<T>,
        xi_des: &BodyVelocity<T>,
        params: &RobotParams<T>,
        noise: &NoiseConfig<T>,
    ) -> Result<AptOutput<T>> {
        self.observe(obs, u_prev, params, noise)?;
        Ok(self.control(xi_des, params))
    }

    /// RLS refresh followed by the filter update under the refreshed model.
    pub fn observe(
        &mut self,
        obs: &BodyVelocity<T>,
        u_prev: &WheelTorques<T>,
        params: &RobotParams<T>,
        noise: &NoiseConfig<T>,
    ) -> Result<UpdateResult<T, 3, 3>> {
        let prev = BodyVelocity::from_vector(&self.belief.mean);
        self.rls = rls_update(&self.rls, obs, &prev, u_prev, params)?;
        let g = control_matrix(&self.fault_estimate(), params);
        let up = dyna_filter_step(&self.belief, &g, u_prev, obs, params, noise)?;
        self.belief = up.belief;
        Ok(up)
    }
}
